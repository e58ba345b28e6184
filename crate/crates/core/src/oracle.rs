//! Independent validation paths for the lead-field pipeline.
//!
//! * [`forward_bidomain`] solves the quasi-static conduction problem per
//!   time step and keeps the boundary potential traces; together with
//!   [`pointwise_ecg`] this reproduces the lead signal through point
//!   evaluation instead of lead fields (reciprocity cross-check).
//! * [`mc_statistics`] samples electrode positions from their densities
//!   and evaluates the stored traces, giving Monte-Carlo estimates of the
//!   expectation and variance with standard errors.
//! * [`full_tensor_correlation`] solves the tensor-product correlation
//!   problem exactly on small meshes with a dense pseudo-inverse.

use crate::assembly::{CorrelationMatrix, LoadVector, StiffnessMatrix};
use crate::density::JointDensityModel;
use crate::ecg::LeadDefinition;
use crate::error::{Error, Result};
use crate::linsolve::{dense_pseudo_inverse, solve_singular, SingularSolveReport, SolveOptions};
use crate::mesh::{BoundaryPoint, TriMesh};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

/// Boundary potential traces of the forward conduction solve.
pub struct ForwardSolution {
    pub times: Vec<f64>,
    /// Per time step: potential at the boundary loop vertices, mean-zero
    /// gauge over all mesh vertices.
    pub traces: Vec<Vec<f64>>,
    pub reports: Vec<SingularSolveReport>,
    /// Optional full potential fields at requested snapshot times.
    pub snapshots: Vec<(f64, Vec<f64>)>,
}

/// Solve the conduction problem for every transmembrane load and store the
/// boundary traces. `snapshot_times` selects instants whose full field is
/// kept (nearest grid point).
pub fn forward_bidomain(
    mesh: &TriMesh,
    k: &StiffnessMatrix,
    vm_loads: &[LoadVector],
    times: &[f64],
    opts: &SolveOptions,
    snapshot_times: &[f64],
) -> Result<ForwardSolution> {
    if vm_loads.len() != times.len() {
        return Err(Error::Dimension(format!(
            "{} loads for {} time steps",
            vm_loads.len(),
            times.len()
        )));
    }
    let solutions: Vec<(Vec<f64>, SingularSolveReport)> = vm_loads
        .par_iter()
        .map(|load| solve_singular(k, &load.negated(), opts))
        .collect::<Result<_>>()?;

    let snapshot_indices: Vec<usize> = snapshot_times
        .iter()
        .map(|&s| {
            times
                .iter()
                .enumerate()
                .min_by(|(_, a), (_, b)| (*a - s).abs().partial_cmp(&(*b - s).abs()).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(0)
        })
        .collect();

    let traces = solutions
        .iter()
        .map(|(u, _)| {
            mesh.boundary
                .loop_vertices
                .iter()
                .map(|&v| u[v])
                .collect()
        })
        .collect();
    let snapshots = snapshot_indices
        .iter()
        .map(|&i| (times[i], solutions[i].0.clone()))
        .collect();
    Ok(ForwardSolution {
        times: times.to_vec(),
        traces,
        reports: solutions.into_iter().map(|(_, r)| r).collect(),
        snapshots,
    })
}

/// Evaluate the lead signal from stored boundary traces by piecewise-linear
/// interpolation at the electrode positions.
pub fn pointwise_ecg(
    mesh: &TriMesh,
    forward: &ForwardSolution,
    electrodes: &[BoundaryPoint],
    lead: &LeadDefinition,
) -> Result<Vec<f64>> {
    lead.validate()?;
    if electrodes.len() != lead.electrodes.len() {
        return Err(Error::Dimension(format!(
            "{} positions for {} electrodes",
            electrodes.len(),
            lead.electrodes.len()
        )));
    }
    let weights = lead.weight_values();
    Ok(forward
        .traces
        .iter()
        .map(|trace| {
            electrodes
                .iter()
                .zip(&weights)
                .map(|(p, &a)| a * mesh.interpolate_on_boundary(trace, p))
                .sum()
        })
        .collect())
}

/// Monte-Carlo estimates of the lead statistics.
pub struct McStatistics {
    pub n_samples: usize,
    pub mean: Vec<f64>,
    /// Unbiased sample variance.
    pub variance: Vec<f64>,
    /// Standard error of the mean.
    pub stderr_mean: Vec<f64>,
    /// Delete-1 jackknife standard error of the variance.
    pub stderr_variance: Vec<f64>,
}

/// Sample electrode tuples from their (independent) densities and evaluate
/// the stored boundary traces.
pub fn mc_statistics(
    mesh: &TriMesh,
    forward: &ForwardSolution,
    densities: &JointDensityModel,
    lead: &LeadDefinition,
    n_samples: usize,
    seed: u64,
) -> Result<McStatistics> {
    lead.validate()?;
    if !matches!(
        densities.pairwise,
        crate::density::PairwiseMarginals::Independent
    ) {
        return Err(Error::Density(
            "Monte-Carlo sampling supports independent electrode models".into(),
        ));
    }
    if densities.electrodes.len() != lead.electrodes.len() {
        return Err(Error::Dimension(format!(
            "{} densities for {} electrodes",
            densities.electrodes.len(),
            lead.electrodes.len()
        )));
    }
    if n_samples < 100 {
        return Err(Error::Density(format!(
            "need at least 100 samples, got {n_samples}"
        )));
    }
    if densities.electrodes.iter().any(|d| d.is_degenerate()) {
        // degenerate densities sample deterministically; statistics are
        // still well defined, so no error here
    }

    let weights = lead.weight_values();
    let nb = mesh.boundary.n();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);

    // per-sample sparse evaluation weights over boundary nodes
    let mut eval: Vec<(u32, f64)> = Vec::with_capacity(n_samples * weights.len() * 2);
    for _ in 0..n_samples {
        for (density, &a) in densities.electrodes.iter().zip(&weights) {
            let p = density.sample(mesh, &mut rng);
            let j = (p.segment + 1) % nb;
            eval.push((p.segment as u32, a * (1.0 - p.local)));
            eval.push((j as u32, a * p.local));
        }
    }
    let stride = 2 * weights.len();

    let nt = forward.times.len();
    let nf = n_samples as f64;
    let mut mean = vec![0.0f64; nt];
    let mut variance = vec![0.0f64; nt];
    let mut stderr_mean = vec![0.0f64; nt];
    let mut stderr_variance = vec![0.0f64; nt];

    let value_at = |trace: &[f64], s: usize| -> f64 {
        eval[s * stride..(s + 1) * stride]
            .iter()
            .map(|&(i, w)| w * trace[i as usize])
            .sum()
    };

    for t in 0..nt {
        let trace = &forward.traces[t];
        let mut s1 = 0.0;
        for s in 0..n_samples {
            s1 += value_at(trace, s);
        }
        let m = s1 / nf;
        // central sums for variance and its jackknife spread
        let (mut c2, mut c4) = (0.0, 0.0);
        for s in 0..n_samples {
            let d = value_at(trace, s) - m;
            let d2 = d * d;
            c2 += d2;
            c4 += d2 * d2;
        }
        let var = c2 / (nf - 1.0);
        // delete-1 jackknife of the unbiased variance:
        // theta_i = (c2 - d_i^2 * n/(n-1)) / (n-2)
        let a0 = c2 / (nf - 2.0);
        let a1 = -nf / ((nf - 1.0) * (nf - 2.0));
        // theta_i = a0 + a1 d_i^2; pseudo-spread from c2 and c4
        let theta_mean = a0 + a1 * c2 / nf;
        let theta_sq_sum = nf * a0 * a0 + 2.0 * a0 * a1 * c2 + a1 * a1 * c4;
        let ss = (theta_sq_sum / nf - theta_mean * theta_mean).max(0.0);
        mean[t] = m;
        variance[t] = var;
        stderr_mean[t] = (var / nf).sqrt();
        stderr_variance[t] = ((nf - 1.0) * ss).sqrt();
    }

    Ok(McStatistics {
        n_samples,
        mean,
        variance,
        stderr_mean,
        stderr_variance,
    })
}

/// Exact correlation surface from the dense tensor-product solve
/// `Z = K^+ R K^+` on a small mesh: `Cor(t_i, t_j) = V(t_i)^T Z V(t_j)`
/// over the requested time indices.
pub fn full_tensor_correlation(
    mesh: &TriMesh,
    k: &StiffnessMatrix,
    r: &CorrelationMatrix,
    vm_loads: &[LoadVector],
    time_indices: &[usize],
) -> Result<DMatrix<f64>> {
    let n = k.n();
    if n > 500 {
        return Err(Error::Dimension(format!(
            "full tensor-product solve limited to 500 nodes, mesh has {n}"
        )));
    }
    let nb = mesh.boundary.n();
    if r.dim() != nb {
        return Err(Error::Dimension(format!(
            "correlation has dimension {}, boundary has {nb} nodes",
            r.dim()
        )));
    }
    // scatter R to full indexing
    let mut r_full = DMatrix::zeros(n, n);
    for i in 0..nb {
        let gi = mesh.boundary.loop_vertices[i];
        for j in 0..nb {
            let gj = mesh.boundary.loop_vertices[j];
            r_full[(gi, gj)] = r.matrix[(i, j)];
        }
    }
    let pinv = dense_pseudo_inverse(k)?;
    let z = &pinv * r_full * &pinv;

    let m = time_indices.len();
    let mut cor = DMatrix::zeros(m, m);
    let zv: Vec<DVector<f64>> = time_indices
        .iter()
        .map(|&t| &z * DVector::from_column_slice(&vm_loads[t].values))
        .collect();
    for a in 0..m {
        let va = DVector::from_column_slice(&vm_loads[time_indices[a]].values);
        for b in 0..m {
            cor[(a, b)] = va.dot(&zv[b]);
        }
    }
    // exact symmetrization of the quadratic form
    let sym = (cor.clone() + cor.transpose()) * 0.5;
    Ok(sym)
}

/// Write a per-time comparison report (comparand vs oracle).
pub fn write_comparison_csv(
    path: &std::path::Path,
    times: &[f64],
    comparand: &[f64],
    oracle: &[f64],
) -> Result<()> {
    use std::fmt::Write as _;
    let mut out = String::from("t_ms,comparand_mv,oracle_mv,abs_err_mv,rel_err\n");
    let scale = oracle.iter().fold(0.0f64, |a, &v| a.max(v.abs())).max(1e-300);
    for i in 0..times.len() {
        let abs = (comparand[i] - oracle[i]).abs();
        writeln!(
            out,
            "{},{},{},{},{}",
            times[i],
            comparand[i],
            oracle[i],
            abs,
            abs / scale
        )
        .unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::{
        assemble_correlation, assemble_expected_load, assemble_stiffness, ConductivityModel,
    };
    use crate::density::{dirac_density, uniform_density, JointDensityModel};
    use crate::ecg::{vm_load_series, LeadDefinition};
    use crate::mesh::{build_idealized_geometry, electrode_anchor, GeometryParams};

    struct Fixture {
        mesh: crate::mesh::TriMesh,
        k: StiffnessMatrix,
        vm_loads: Vec<LoadVector>,
        times: Vec<f64>,
        lead: LeadDefinition,
        anchors: Vec<BoundaryPoint>,
    }

    fn fixture() -> Fixture {
        let (mesh, fibers) =
            build_idealized_geometry(&GeometryParams::default().scaled_edges(8.0)).unwrap();
        let cond = ConductivityModel::default();
        let k = assemble_stiffness(&mesh, &fibers, &cond).unwrap();
        // synthetic transmembrane series: radial ramp field scaled over time
        let xh = [-4.0, 2.0];
        let base: Vec<f64> = mesh
            .vertices
            .iter()
            .map(|v| ((v[0] - xh[0]).powi(2) + (v[1] - xh[1]).powi(2)).sqrt())
            .collect();
        let times: Vec<f64> = (0..6).map(|i| i as f64 * 10.0).collect();
        let vm: Vec<Vec<f64>> = times
            .iter()
            .map(|&t| base.iter().map(|b| (t + 1.0) * b).collect())
            .collect();
        let vm_loads = vm_load_series(&mesh, &fibers, &cond, &vm);
        let lead = LeadDefinition::standard_lead_ii();
        let anchors = lead.angles.iter().map(|&a| electrode_anchor(&mesh, a)).collect();
        Fixture {
            mesh,
            k,
            vm_loads,
            times,
            lead,
            anchors,
        }
    }

    #[test]
    fn constant_vm_gives_zero_everywhere() {
        let f = fixture();
        let vm = vec![vec![3.0; f.mesh.n_vertices()]];
        let (mesh2, fibers2) =
            build_idealized_geometry(&GeometryParams::default().scaled_edges(8.0)).unwrap();
        let loads = vm_load_series(&mesh2, &fibers2, &ConductivityModel::default(), &vm);
        let fwd = forward_bidomain(
            &f.mesh,
            &f.k,
            &loads,
            &[0.0],
            &SolveOptions::default(),
            &[],
        )
        .unwrap();
        assert!(fwd.traces[0].iter().all(|&u| u.abs() < 1e-12));
    }

    #[test]
    fn forward_solve_is_linear_in_vm() {
        let f = fixture();
        let fwd = forward_bidomain(
            &f.mesh,
            &f.k,
            &f.vm_loads,
            &f.times,
            &SolveOptions::default(),
            &[],
        )
        .unwrap();
        let doubled: Vec<LoadVector> = f
            .vm_loads
            .iter()
            .map(|l| LoadVector {
                values: l.values.iter().map(|v| 2.0 * v).collect(),
                role: l.role,
            })
            .collect();
        let fwd2 = forward_bidomain(
            &f.mesh,
            &f.k,
            &doubled,
            &f.times,
            &SolveOptions::default(),
            &[],
        )
        .unwrap();
        let scale = fwd2.traces[3].iter().fold(0.0f64, |a, &v| a.max(v.abs()));
        for (a, b) in fwd.traces[3].iter().zip(&fwd2.traces[3]) {
            assert!((2.0 * a - b).abs() <= 1e-7 * scale.max(1e-30));
        }
    }

    #[test]
    fn pointwise_ecg_is_gauge_invariant() {
        let f = fixture();
        let mut fwd = forward_bidomain(
            &f.mesh,
            &f.k,
            &f.vm_loads,
            &f.times,
            &SolveOptions::default(),
            &[],
        )
        .unwrap();
        let v1 = pointwise_ecg(&f.mesh, &fwd, &f.anchors, &f.lead).unwrap();
        for trace in fwd.traces.iter_mut() {
            for u in trace.iter_mut() {
                *u += 17.5;
            }
        }
        let v2 = pointwise_ecg(&f.mesh, &fwd, &f.anchors, &f.lead).unwrap();
        let scale = v1.iter().fold(1e-30f64, |a, &v| a.max(v.abs()));
        for (a, b) in v1.iter().zip(&v2) {
            // lead II has integer weights: the shift cancels to rounding
            assert!((a - b).abs() <= 1e-12 * scale.max(17.5));
        }
    }

    #[test]
    fn mc_is_reproducible_and_degenerate_sampling_has_zero_variance() {
        let f = fixture();
        let fwd = forward_bidomain(
            &f.mesh,
            &f.k,
            &f.vm_loads,
            &f.times,
            &SolveOptions::default(),
            &[],
        )
        .unwrap();
        let joint = JointDensityModel::independent(
            f.anchors
                .iter()
                .map(|p| uniform_density(&f.mesh, p, 1.5).unwrap())
                .collect(),
        );
        let a = mc_statistics(&f.mesh, &fwd, &joint, &f.lead, 500, 99).unwrap();
        let b = mc_statistics(&f.mesh, &fwd, &joint, &f.lead, 500, 99).unwrap();
        assert_eq!(a.mean, b.mean);
        assert_eq!(a.variance, b.variance);

        let dirac = JointDensityModel::independent(
            f.anchors.iter().map(|p| dirac_density(&f.mesh, p)).collect(),
        );
        let d = mc_statistics(&f.mesh, &fwd, &dirac, &f.lead, 500, 3).unwrap();
        assert!(d.variance.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mc_stderr_shrinks_like_inverse_sqrt_n() {
        let f = fixture();
        let fwd = forward_bidomain(
            &f.mesh,
            &f.k,
            &f.vm_loads,
            &f.times,
            &SolveOptions::default(),
            &[],
        )
        .unwrap();
        let joint = JointDensityModel::independent(
            f.anchors
                .iter()
                .map(|p| uniform_density(&f.mesh, p, 1.5).unwrap())
                .collect(),
        );
        let small = mc_statistics(&f.mesh, &fwd, &joint, &f.lead, 2_000, 5).unwrap();
        let large = mc_statistics(&f.mesh, &fwd, &joint, &f.lead, 8_000, 5).unwrap();
        // pick the time with the largest signal
        let t = (0..f.times.len())
            .max_by(|&a, &b| {
                small.stderr_mean[a]
                    .partial_cmp(&small.stderr_mean[b])
                    .unwrap()
            })
            .unwrap();
        let ratio = small.stderr_mean[t] / large.stderr_mean[t];
        assert!(
            (ratio - 2.0).abs() < 0.4,
            "quadrupling samples gave stderr ratio {ratio}"
        );
    }

    #[test]
    fn full_tensor_on_rank_one_correlation_factorizes() {
        let f = fixture();
        assert!(f.k.n() <= 500);
        let dirac = JointDensityModel::independent(
            f.anchors.iter().map(|p| dirac_density(&f.mesh, p)).collect(),
        );
        let r = assemble_correlation(&f.mesh, &dirac, &f.lead).unwrap();
        let idx: Vec<usize> = (0..f.times.len()).collect();
        let cor = full_tensor_correlation(&f.mesh, &f.k, &r, &f.vm_loads, &idx).unwrap();
        // rank-one R = g g^T: Cor(t, s) = (V(t).K^+ g)(V(s).K^+ g)
        let g = assemble_expected_load(&f.mesh, &dirac, &f.lead).unwrap();
        let zeta = crate::linsolve::dense_pseudo_solve(&f.k, &g.values).unwrap();
        let signal: Vec<f64> = f
            .vm_loads
            .iter()
            .map(|l| l.values.iter().zip(&zeta).map(|(a, b)| a * b).sum::<f64>())
            .collect();
        let scale = cor.abs().max().max(1e-30);
        let mut worst = 0.0f64;
        for a in 0..idx.len() {
            for b in 0..idx.len() {
                worst = worst.max((cor[(a, b)] - signal[a] * signal[b]).abs() / scale);
                assert_eq!(cor[(a, b)], cor[(b, a)]);
            }
        }
        assert!(worst <= 1e-7, "tensor solve deviates by {worst:.3e} relative");
    }
}
