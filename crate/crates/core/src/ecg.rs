//! Lead definitions and the lead-field computation of deterministic and
//! statistical ECG signals.
//!
//! A lead is a zero-sum weighted combination of boundary potential
//! readings. Its deterministic value, expectation and correlation under
//! random electrode positions are all inner products of transmembrane
//! load vectors with solutions of the same singular conduction operator,
//! so one stiffness assembly serves every signal:
//!
//! * deterministic / expected signal: one solve against the (expected)
//!   electrode pattern;
//! * correlation: a truncated pivoted Cholesky factorization of the
//!   boundary correlation matrix, one solve per factor, and diagonal
//!   contraction of the factor signals.

use crate::assembly::{
    assemble_correlation, assemble_expected_load, assemble_point_load, assemble_vm_load,
    scatter_boundary_vector, ConductivityModel, LoadVector, StiffnessMatrix,
};
use crate::density::JointDensityModel;
use crate::error::{Error, Result};
use crate::linsolve::{solve_singular, SingularSolveReport, SolveOptions};
use crate::lowrank::pivoted_cholesky;
use crate::mesh::{BoundaryPoint, FiberField, TriMesh};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::Path;

// ---------------------------------------------------------------------------
// Exact rational lead weights
// ---------------------------------------------------------------------------

/// Exact rational number; keeps lead weight sums exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rational {
    num: i64,
    den: i64,
}

fn gcd(a: i64, b: i64) -> i64 {
    let (mut a, mut b) = (a.abs(), b.abs());
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

impl Rational {
    pub fn new(num: i64, den: i64) -> Result<Self> {
        if den == 0 {
            return Err(Error::Lead("rational with zero denominator".into()));
        }
        let sign = if den < 0 { -1 } else { 1 };
        let g = gcd(num, den).max(1);
        Ok(Rational {
            num: sign * num / g,
            den: sign * den / g,
        })
    }

    pub fn integer(num: i64) -> Self {
        Rational { num, den: 1 }
    }

    pub fn zero() -> Self {
        Rational { num: 0, den: 1 }
    }

    pub fn is_zero(&self) -> bool {
        self.num == 0
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 / self.den as f64
    }

    pub fn add(&self, other: &Rational) -> Result<Rational> {
        let num = (self.num as i128) * (other.den as i128) + (other.num as i128) * (self.den as i128);
        let den = (self.den as i128) * (other.den as i128);
        let g = {
            let (mut a, mut b) = (num.abs(), den.abs());
            while b != 0 {
                let t = a % b;
                a = b;
                b = t;
            }
            a.max(1)
        };
        let (num, den) = (num / g, den / g);
        if num > i64::MAX as i128 || num < i64::MIN as i128 || den > i64::MAX as i128 {
            return Err(Error::Lead("rational overflow".into()));
        }
        Rational::new(num as i64, den as i64)
    }

    /// Parse `"1"`, `"-1"`, `"-1/3"` and the like.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        let parse_int = |t: &str| -> Result<i64> {
            t.trim().parse().map_err(|_| {
                Error::Lead(format!("cannot parse '{t}' as an integer in rational '{s}'"))
            })
        };
        match s.split_once('/') {
            Some((n, d)) => Rational::new(parse_int(n)?, parse_int(d)?),
            None => Ok(Rational::integer(parse_int(s)?)),
        }
    }
}

impl std::fmt::Display for Rational {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

// ---------------------------------------------------------------------------
// Lead definition
// ---------------------------------------------------------------------------

/// A lead: labelled electrodes, exact zero-sum weights and the anchor
/// angles of the mean electrode positions.
#[derive(Debug, Clone)]
pub struct LeadDefinition {
    pub label: String,
    pub electrodes: Vec<String>,
    pub weights: Vec<Rational>,
    pub angles: Vec<f64>,
}

impl LeadDefinition {
    pub fn new(
        label: impl Into<String>,
        entries: Vec<(String, Rational, f64)>,
    ) -> Result<Self> {
        let lead = LeadDefinition {
            label: label.into(),
            electrodes: entries.iter().map(|e| e.0.clone()).collect(),
            weights: entries.iter().map(|e| e.1).collect(),
            angles: entries.iter().map(|e| e.2).collect(),
        };
        lead.validate()?;
        Ok(lead)
    }

    pub fn validate(&self) -> Result<()> {
        if self.electrodes.len() < 2 {
            return Err(Error::Lead(format!(
                "lead '{}' needs at least 2 electrodes",
                self.label
            )));
        }
        if self.electrodes.len() != self.weights.len()
            || self.electrodes.len() != self.angles.len()
        {
            return Err(Error::Lead(format!(
                "lead '{}' has inconsistent electrode/weight/angle counts",
                self.label
            )));
        }
        let mut sum = Rational::zero();
        for w in &self.weights {
            sum = sum.add(w)?;
        }
        if !sum.is_zero() {
            return Err(Error::Lead(format!(
                "lead '{}' weights sum to {sum}, not zero",
                self.label
            )));
        }
        let mut labels: Vec<&String> = self.electrodes.iter().collect();
        labels.sort();
        labels.dedup();
        if labels.len() != self.electrodes.len() {
            return Err(Error::Lead(format!(
                "lead '{}' has duplicate electrode labels",
                self.label
            )));
        }
        Ok(())
    }

    pub fn weight_values(&self) -> Vec<f64> {
        self.weights.iter().map(|w| w.to_f64()).collect()
    }

    /// Limb lead II over the four-electrode benchmark set.
    pub fn standard_lead_ii() -> Self {
        use std::f64::consts::PI;
        LeadDefinition::new(
            "II",
            vec![
                ("VL".into(), Rational::integer(-1), 0.75 * PI),
                ("VR".into(), Rational::integer(0), 0.25 * PI),
                ("VF".into(), Rational::integer(1), 1.5 * PI),
                ("V1".into(), Rational::integer(0), PI),
            ],
        )
        .expect("valid lead")
    }

    /// Precordial lead V1 referenced to the limb average.
    pub fn standard_lead_v1() -> Self {
        use std::f64::consts::PI;
        LeadDefinition::new(
            "V1",
            vec![
                ("VL".into(), Rational::new(-1, 3).unwrap(), 0.75 * PI),
                ("VR".into(), Rational::new(-1, 3).unwrap(), 0.25 * PI),
                ("VF".into(), Rational::new(-1, 3).unwrap(), 1.5 * PI),
                ("V1".into(), Rational::integer(1), PI),
            ],
        )
        .expect("valid lead")
    }

    /// Minimal two-electrode lead (weight -1 on the first, +1 on the
    /// second); handy in tests.
    pub fn two_electrode(
        label: &str,
        neg: &str,
        pos: &str,
        neg_angle: f64,
        pos_angle: f64,
    ) -> Self {
        LeadDefinition::new(
            label,
            vec![
                (neg.into(), Rational::integer(-1), neg_angle),
                (pos.into(), Rational::integer(1), pos_angle),
            ],
        )
        .expect("valid lead")
    }
}

// ---------------------------------------------------------------------------
// Signals and statistics
// ---------------------------------------------------------------------------

/// Transmembrane load vectors for every time instant.
pub fn vm_load_series(
    mesh: &TriMesh,
    fibers: &FiberField,
    conductivity: &ConductivityModel,
    vm_series: &[Vec<f64>],
) -> Vec<LoadVector> {
    vm_series
        .par_iter()
        .map(|vm| assemble_vm_load(mesh, fibers, conductivity, vm))
        .collect()
}

/// Solve the conduction problem for a boundary electrode pattern.
///
/// The pattern enters negated: with that sign the inner product of the
/// returned field with a transmembrane load reproduces the pointwise
/// boundary reading of the same pattern (reciprocity).
pub fn lead_field_solution(
    k: &StiffnessMatrix,
    load: &LoadVector,
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SingularSolveReport)> {
    solve_singular(k, &load.negated(), opts)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Contract a nodal field against every transmembrane load.
pub fn field_signal(vm_loads: &[LoadVector], field: &[f64]) -> Vec<f64> {
    vm_loads.iter().map(|l| dot(&l.values, field)).collect()
}

/// Deterministic lead signal for electrodes at fixed boundary positions.
/// Returns the signal and the lead field it came from.
pub fn deterministic_ecg(
    k: &StiffnessMatrix,
    mesh: &TriMesh,
    vm_loads: &[LoadVector],
    electrodes: &[BoundaryPoint],
    lead: &LeadDefinition,
    opts: &SolveOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let g = assemble_point_load(mesh, electrodes, lead)?;
    let (z, _) = lead_field_solution(k, &g, opts)?;
    Ok((field_signal(vm_loads, &z), z))
}

/// Expected lead signal under the electrode position densities.
pub fn expected_ecg(
    k: &StiffnessMatrix,
    mesh: &TriMesh,
    vm_loads: &[LoadVector],
    densities: &JointDensityModel,
    lead: &LeadDefinition,
    opts: &SolveOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let g = assemble_expected_load(mesh, densities, lead)?;
    let (z, _) = lead_field_solution(k, &g, opts)?;
    Ok((field_signal(vm_loads, &z), z))
}

/// Factorized correlation of the lead signal.
pub struct CorrelationFactors {
    /// Per factor: the signal `t -> V(t) . zeta_k` (mV).
    pub factor_signals: Vec<Vec<f64>>,
    /// Per factor: the nodal solution field.
    pub fields: Vec<Vec<f64>>,
    pub residual_trace: f64,
}

impl CorrelationFactors {
    pub fn rank(&self) -> usize {
        self.factor_signals.len()
    }
}

/// Assemble and factorize the boundary correlation, then solve one
/// conduction problem per factor.
pub fn correlation_factors(
    k: &StiffnessMatrix,
    mesh: &TriMesh,
    vm_loads: &[LoadVector],
    densities: &JointDensityModel,
    lead: &LeadDefinition,
    cholesky_tol: f64,
    opts: &SolveOptions,
) -> Result<CorrelationFactors> {
    let r = assemble_correlation(mesh, densities, lead)?;
    let factors = pivoted_cholesky(&r, cholesky_tol)?;
    let fields: Vec<Vec<f64>> = factors
        .factors
        .par_iter()
        .map(|f| {
            let rhs = scatter_boundary_vector(mesh, f);
            solve_singular(k, &rhs, opts).map(|(x, _)| x)
        })
        .collect::<Result<_>>()?;
    let factor_signals = fields
        .iter()
        .map(|zeta| field_signal(vm_loads, zeta))
        .collect();
    Ok(CorrelationFactors {
        factor_signals,
        fields,
        residual_trace: factors.residual_trace,
    })
}

/// Time-resolved lead statistics.
#[derive(Debug, Clone)]
pub struct EcgStatistics {
    /// Time grid (ms).
    pub times: Vec<f64>,
    /// Deterministic signal at the anchor electrodes (mV).
    pub deterministic: Vec<f64>,
    /// Expected signal (mV).
    pub expected: Vec<f64>,
    /// Variance (mV^2); may carry a tiny negative truncation slack.
    pub variance: Vec<f64>,
    /// 95% confidence band bounds (mV).
    pub band_low: Vec<f64>,
    pub band_high: Vec<f64>,
    /// Factor signals of the correlation, rank x times.
    pub cor_factors: Vec<Vec<f64>>,
}

impl EcgStatistics {
    pub fn assemble(
        times: Vec<f64>,
        deterministic: Vec<f64>,
        expected: Vec<f64>,
        cor_factors: Vec<Vec<f64>>,
    ) -> Self {
        let nt = times.len();
        let mut variance = Vec::with_capacity(nt);
        for i in 0..nt {
            let second_moment: f64 = cor_factors.iter().map(|c| c[i] * c[i]).sum();
            variance.push(second_moment - expected[i] * expected[i]);
        }
        let band: Vec<(f64, f64)> = (0..nt)
            .map(|i| {
                let half = 1.96 * variance[i].max(0.0).sqrt();
                (expected[i] - half, expected[i] + half)
            })
            .collect();
        EcgStatistics {
            times,
            deterministic,
            expected,
            variance,
            band_low: band.iter().map(|b| b.0).collect(),
            band_high: band.iter().map(|b| b.1).collect(),
            cor_factors,
        }
    }

    pub fn rank(&self) -> usize {
        self.cor_factors.len()
    }

    /// Non-central second-moment surface `Cor[V](t_i, t_j)`.
    pub fn correlation(&self, i: usize, j: usize) -> f64 {
        self.cor_factors.iter().map(|c| c[i] * c[j]).sum()
    }

    pub fn max_std(&self) -> f64 {
        self.variance
            .iter()
            .map(|v| v.max(0.0).sqrt())
            .fold(0.0, f64::max)
    }

    pub fn max_expected_gap(&self) -> f64 {
        self.expected
            .iter()
            .zip(&self.deterministic)
            .map(|(e, d)| (e - d).abs())
            .fold(0.0, f64::max)
    }

    /// Largest violation of `Var >= 0` relative to the correlation scale.
    pub fn negative_variance_slack(&self) -> f64 {
        let scale = (0..self.times.len())
            .map(|i| self.correlation(i, i).abs())
            .fold(1e-300, f64::max);
        self.variance.iter().map(|v| (-v).max(0.0)).fold(0.0, f64::max) / scale
    }

    /// Write the per-time CSV (`t_ms, v_det_mv, e_mv, var_mv2, band_lo_mv,
    /// band_hi_mv`).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("t_ms,v_det_mv,e_mv,var_mv2,band_lo_mv,band_hi_mv\n");
        for i in 0..self.times.len() {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                self.times[i],
                self.deterministic[i],
                self.expected[i],
                self.variance[i],
                self.band_low[i],
                self.band_high[i]
            )
            .unwrap();
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

use crate::activation::{monodomain_tensor, solve_eikonal_heat, transmembrane_series, ActivationMap};
use crate::config::{DensityKindSpec, RunConfig};

/// Everything the pipeline and the oracles share for one configuration:
/// mesh, operators, activation and the transmembrane load series.
pub struct Scene {
    pub mesh: TriMesh,
    pub fibers: FiberField,
    pub conductivity: ConductivityModel,
    pub stiffness: StiffnessMatrix,
    pub heart: crate::mesh::SubMesh,
    pub activation: ActivationMap,
    pub times: Vec<f64>,
    pub vm: Vec<Vec<f64>>,
    pub vm_loads: Vec<LoadVector>,
    /// Anchor boundary points per configured electrode, in config order.
    pub anchors: Vec<(String, BoundaryPoint)>,
    /// (label, angle, spread) per configured electrode.
    pub electrode_specs: Vec<(String, f64, f64)>,
    pub solve_opts: SolveOptions,
    pub cholesky_tol: f64,
    pub seed: u64,
}

impl Scene {
    pub fn build(cfg: &RunConfig) -> Result<Scene> {
        cfg.validate()?;
        let params = cfg.geometry_params();
        let (mesh, fibers) =
            crate::mesh::build_idealized_geometry(&params).map_err(|e| e.in_stage("mesh"))?;
        let conductivity = cfg.conductivity_model();
        let stiffness = crate::assembly::assemble_stiffness(&mesh, &fibers, &conductivity)
            .map_err(|e| e.in_stage("stiffness"))?;

        let solve_opts = SolveOptions {
            tolerance: cfg.solver.tolerance,
            max_iterations: Some(cfg.solver.max_iterations_per_node * mesh.n_vertices()),
        };

        let heart = crate::mesh::extract_region(&mesh, &fibers, crate::mesh::Region::Heart);
        let model = monodomain_tensor(
            &conductivity,
            &heart,
            cfg.activation.cv_longitudinal_cm_per_s,
            cfg.activation.heat_step_ms,
        )
        .map_err(|e| e.in_stage("activation"))?;
        let activation = solve_eikonal_heat(
            &heart,
            &model,
            [cfg.activation.source_x_cm, cfg.activation.source_y_cm],
            &solve_opts,
        )
        .map_err(|e| e.in_stage("activation"))?;

        let times = cfg.time_grid();
        let template = cfg.ap_template();
        let vm = transmembrane_series(&heart, &activation, &template, &times)
            .map_err(|e| e.in_stage("transmembrane"))?;
        let vm_loads = vm_load_series(&mesh, &fibers, &conductivity, &vm);

        let anchors = cfg
            .electrodes
            .iter()
            .map(|e| (e.label.clone(), crate::mesh::electrode_anchor(&mesh, e.angle_rad)))
            .collect();
        let electrode_specs = cfg
            .electrodes
            .iter()
            .map(|e| (e.label.clone(), e.angle_rad, e.spread_cm))
            .collect();

        Ok(Scene {
            mesh,
            fibers,
            conductivity,
            stiffness,
            heart,
            activation,
            times,
            vm,
            vm_loads,
            anchors,
            electrode_specs,
            solve_opts,
            cholesky_tol: cfg.solver.cholesky_tolerance,
            seed: cfg.run.seed,
        })
    }

    pub fn anchor(&self, label: &str) -> Result<&BoundaryPoint> {
        self.anchors
            .iter()
            .find(|(l, _)| l == label)
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Config(format!("no anchor for electrode '{label}'")))
    }

    fn spread(&self, label: &str) -> Result<f64> {
        self.electrode_specs
            .iter()
            .find(|(l, _, _)| l == label)
            .map(|&(_, _, s)| s)
            .ok_or_else(|| Error::Config(format!("no electrode spec for '{label}'")))
    }

    /// Build the marginal density of one electrode for a density kind.
    pub fn density(&self, kind: DensityKindSpec, label: &str) -> Result<crate::density::DensityField> {
        let anchor = self.anchor(label)?;
        match kind {
            DensityKindSpec::Uniform => {
                crate::density::uniform_density(&self.mesh, anchor, self.spread(label)?)
            }
            DensityKindSpec::Gaussian => {
                crate::density::gaussian_density(&self.mesh, anchor, self.spread(label)?)
            }
            DensityKindSpec::Dirac => Ok(crate::density::dirac_density(&self.mesh, anchor)),
        }
    }

    /// Joint independent model for a lead's electrodes.
    pub fn joint_density(
        &self,
        kind: DensityKindSpec,
        lead: &LeadDefinition,
    ) -> Result<JointDensityModel> {
        let densities = lead
            .electrodes
            .iter()
            .map(|label| self.density(kind, label))
            .collect::<Result<Vec<_>>>()?;
        Ok(JointDensityModel::independent(densities))
    }

    /// Anchor positions of a lead's electrodes, in lead order.
    pub fn lead_anchors(&self, lead: &LeadDefinition) -> Result<Vec<BoundaryPoint>> {
        lead.electrodes
            .iter()
            .map(|label| self.anchor(label).copied())
            .collect()
    }
}

/// Result of one lead x density-kind case.
pub struct CaseResult {
    pub lead: String,
    pub density: &'static str,
    pub stats: EcgStatistics,
    /// Expected lead field (nodal).
    pub expected_field: Vec<f64>,
    /// Correlation factor fields (nodal), in pivot order.
    pub factor_fields: Vec<Vec<f64>>,
    pub expected_report: SingularSolveReport,
    pub residual_trace: f64,
    pub seconds: f64,
}

/// Full pipeline output.
pub struct PipelineRun {
    pub scene: Scene,
    pub cases: Vec<CaseResult>,
    pub total_seconds: f64,
}

/// Execute the lead-field procedure for every configured lead and density
/// kind: expected pattern and solve, correlation assembly, truncated
/// factorization, one solve per factor, and the final statistics.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PipelineRun> {
    let started = std::time::Instant::now();
    let scene = Scene::build(cfg)?;
    let leads = cfg.lead_definitions()?;
    let kinds = cfg.density_kinds()?;

    let mut cases = Vec::new();
    for kind in &kinds {
        for lead in &leads {
            let case_start = std::time::Instant::now();
            let joint = scene
                .joint_density(*kind, lead)
                .map_err(|e| e.in_stage("densities"))?;
            let anchors = scene.lead_anchors(lead)?;

            let g = assemble_expected_load(&scene.mesh, &joint, lead)
                .map_err(|e| e.in_stage("expectation"))?;
            let (z, expected_report) = lead_field_solution(&scene.stiffness, &g, &scene.solve_opts)
                .map_err(|e| e.in_stage("expectation"))?;
            let expected = field_signal(&scene.vm_loads, &z);

            let (deterministic, _zdet) = deterministic_ecg(
                &scene.stiffness,
                &scene.mesh,
                &scene.vm_loads,
                &anchors,
                lead,
                &scene.solve_opts,
            )
            .map_err(|e| e.in_stage("expectation"))?;

            let cor = correlation_factors(
                &scene.stiffness,
                &scene.mesh,
                &scene.vm_loads,
                &joint,
                lead,
                scene.cholesky_tol,
                &scene.solve_opts,
            )
            .map_err(|e| e.in_stage("correlation"))?;

            let stats = EcgStatistics::assemble(
                scene.times.clone(),
                deterministic,
                expected,
                cor.factor_signals,
            );
            cases.push(CaseResult {
                lead: lead.label.clone(),
                density: kind.label(),
                stats,
                expected_field: z,
                factor_fields: cor.fields,
                expected_report,
                residual_trace: cor.residual_trace,
                seconds: case_start.elapsed().as_secs_f64(),
            });
        }
    }

    Ok(PipelineRun {
        scene,
        cases,
        total_seconds: started.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_arithmetic_is_exact() {
        let third = Rational::parse("-1/3").unwrap();
        let one = Rational::parse("1").unwrap();
        let sum = third
            .add(&third)
            .unwrap()
            .add(&third)
            .unwrap()
            .add(&one)
            .unwrap();
        assert!(sum.is_zero());
        assert_eq!(Rational::new(2, -4).unwrap(), Rational::new(-1, 2).unwrap());
        assert!(Rational::parse("1/0").is_err());
        assert!(Rational::parse("x").is_err());
    }

    #[test]
    fn lead_validation() {
        assert!(LeadDefinition::standard_lead_ii().validate().is_ok());
        assert!(LeadDefinition::standard_lead_v1().validate().is_ok());
        // single electrode rejected
        let single = LeadDefinition {
            label: "bad".into(),
            electrodes: vec!["A".into()],
            weights: vec![Rational::zero()],
            angles: vec![0.0],
        };
        assert!(single.validate().is_err());
        // nonzero sum rejected
        let bad = LeadDefinition::new(
            "bad",
            vec![
                ("A".into(), Rational::integer(1), 0.0),
                ("B".into(), Rational::integer(1), 1.0),
            ],
        );
        assert!(bad.is_err());
    }

    #[test]
    fn statistics_assembly_and_symmetry() {
        let times = vec![0.0, 1.0, 2.0];
        let det = vec![0.1, 0.2, 0.3];
        let expected = vec![0.1, 0.25, 0.28];
        let factors = vec![vec![0.05, 0.3, 0.2], vec![0.0, 0.1, -0.1]];
        let stats = EcgStatistics::assemble(times, det, expected, factors);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(stats.correlation(i, j), stats.correlation(j, i));
            }
            let var = stats.correlation(i, i) - stats.expected[i] * stats.expected[i];
            assert!((stats.variance[i] - var).abs() < 1e-15);
            assert!(stats.band_high[i] >= stats.band_low[i]);
        }
    }
}
