//! Run configuration: a flat TOML file with unit-suffixed keys.
//!
//! Missing required keys are collected and reported together with their
//! full paths before the typed parse runs. See `configs/` in the
//! repository root and the guide for the documented schema.

use crate::activation::ApTemplate;
use crate::assembly::ConductivityModel;
use crate::density::DensityKind;
use crate::ecg::{LeadDefinition, Rational};
use crate::error::{Error, Result};
use crate::mesh::GeometryParams;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometrySection,
    pub conductivity: ConductivitySection,
    pub activation: ActivationSection,
    pub time: TimeSection,
    pub solver: SolverSection,
    pub electrodes: Vec<ElectrodeSection>,
    pub leads: Vec<LeadSection>,
    pub densities: DensitiesSection,
    pub run: RunSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub torso_semi_axis_x_cm: f64,
    pub torso_semi_axis_y_cm: f64,
    pub heart_center_x_cm: f64,
    pub heart_center_y_cm: f64,
    pub endocardium_radius_cm: f64,
    pub epicardium_radius_cm: f64,
    pub heart_edge_cm: f64,
    pub torso_edge_cm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConductivitySection {
    pub intra_longitudinal_msiemens_per_cm2: f64,
    pub intra_transverse_msiemens_per_cm2: f64,
    pub extra_longitudinal_msiemens_per_cm2: f64,
    pub extra_transverse_msiemens_per_cm2: f64,
    pub torso_msiemens_per_cm2: f64,
    pub blood_msiemens_per_cm2: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActivationSection {
    pub cv_longitudinal_cm_per_s: f64,
    pub source_x_cm: f64,
    pub source_y_cm: f64,
    pub heat_step_ms: f64,
    pub v_rest_mv: f64,
    pub v_depolarized_mv: f64,
    pub upstroke_width_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub end_ms: f64,
    pub step_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub tolerance: f64,
    pub cholesky_tolerance: f64,
    /// Iteration cap as a multiple of the unknown count.
    pub max_iterations_per_node: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ElectrodeSection {
    pub label: String,
    pub angle_rad: f64,
    pub spread_cm: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeadSection {
    pub label: String,
    pub electrodes: Vec<String>,
    /// Exact rational weights, e.g. `["-1/3", "1"]`, parallel to
    /// `electrodes`.
    pub weights: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensitiesSection {
    /// Density kinds to run: subset of "uniform", "gaussian", "dirac".
    pub kinds: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub seed: u64,
    pub output_dir: String,
}

/// Required key paths checked before the typed parse, so an incomplete
/// file reports every missing key at once.
const REQUIRED_KEYS: &[&str] = &[
    "geometry.torso_semi_axis_x_cm",
    "geometry.torso_semi_axis_y_cm",
    "geometry.heart_center_x_cm",
    "geometry.heart_center_y_cm",
    "geometry.endocardium_radius_cm",
    "geometry.epicardium_radius_cm",
    "geometry.heart_edge_cm",
    "geometry.torso_edge_cm",
    "conductivity.intra_longitudinal_msiemens_per_cm2",
    "conductivity.intra_transverse_msiemens_per_cm2",
    "conductivity.extra_longitudinal_msiemens_per_cm2",
    "conductivity.extra_transverse_msiemens_per_cm2",
    "conductivity.torso_msiemens_per_cm2",
    "conductivity.blood_msiemens_per_cm2",
    "activation.cv_longitudinal_cm_per_s",
    "activation.source_x_cm",
    "activation.source_y_cm",
    "activation.heat_step_ms",
    "activation.v_rest_mv",
    "activation.v_depolarized_mv",
    "activation.upstroke_width_ms",
    "time.end_ms",
    "time.step_ms",
    "solver.tolerance",
    "solver.cholesky_tolerance",
    "solver.max_iterations_per_node",
    "electrodes",
    "leads",
    "densities.kinds",
    "run.seed",
    "run.output_dir",
];

impl RunConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| Error::Config(format!("TOML parse error: {e}")))?;
        let value = toml::Value::Table(table);
        let missing: Vec<&str> = REQUIRED_KEYS
            .iter()
            .copied()
            .filter(|key| lookup(&value, key).is_none())
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "missing required keys: {}",
                missing.join(", ")
            )));
        }
        let cfg: RunConfig = toml::from_str(text)
            .map_err(|e| Error::Config(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(self.time.step_ms > 0.0 && self.time.end_ms >= self.time.step_ms) {
            problems.push("time grid must have a positive step and span".to_string());
        }
        if !(self.solver.tolerance > 0.0) {
            problems.push("solver.tolerance must be positive".to_string());
        }
        if !(self.solver.cholesky_tolerance > 0.0) {
            problems.push("solver.cholesky_tolerance must be positive".to_string());
        }
        if self.electrodes.is_empty() {
            problems.push("at least one electrode is required".to_string());
        }
        if self.leads.is_empty() {
            problems.push("at least one lead is required".to_string());
        }
        for e in &self.electrodes {
            if !(e.spread_cm > 0.0) {
                problems.push(format!("electrode {} needs a positive spread", e.label));
            }
        }
        for kind in &self.densities.kinds {
            if !matches!(kind.as_str(), "uniform" | "gaussian" | "dirac") {
                problems.push(format!("unknown density kind '{kind}'"));
            }
        }
        for lead in &self.leads {
            if lead.electrodes.len() != lead.weights.len() {
                problems.push(format!(
                    "lead {} has {} electrodes but {} weights",
                    lead.label,
                    lead.electrodes.len(),
                    lead.weights.len()
                ));
                continue;
            }
            for label in &lead.electrodes {
                if !self.electrodes.iter().any(|e| &e.label == label) {
                    problems.push(format!(
                        "lead {} references undefined electrode '{label}'",
                        lead.label
                    ));
                }
            }
            match self.lead_definition(lead) {
                Ok(def) => {
                    if let Err(e) = def.validate() {
                        problems.push(e.to_string());
                    }
                }
                Err(e) => problems.push(e.to_string()),
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    fn lead_definition(&self, lead: &LeadSection) -> Result<LeadDefinition> {
        let entries = lead
            .electrodes
            .iter()
            .zip(&lead.weights)
            .map(|(label, w)| {
                let e = self
                    .electrodes
                    .iter()
                    .find(|e| &e.label == label)
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "lead {} references undefined electrode '{label}'",
                            lead.label
                        ))
                    })?;
                Ok((label.clone(), Rational::parse(w)?, e.angle_rad))
            })
            .collect::<Result<Vec<_>>>()?;
        LeadDefinition::new(lead.label.clone(), entries)
    }

    pub fn lead_definitions(&self) -> Result<Vec<LeadDefinition>> {
        self.leads.iter().map(|l| self.lead_definition(l)).collect()
    }

    pub fn geometry_params(&self) -> GeometryParams {
        GeometryParams {
            torso_semi_axis_x: self.geometry.torso_semi_axis_x_cm,
            torso_semi_axis_y: self.geometry.torso_semi_axis_y_cm,
            heart_center: [
                self.geometry.heart_center_x_cm,
                self.geometry.heart_center_y_cm,
            ],
            endo_radius: self.geometry.endocardium_radius_cm,
            epi_radius: self.geometry.epicardium_radius_cm,
            heart_edge: self.geometry.heart_edge_cm,
            torso_edge: self.geometry.torso_edge_cm,
        }
    }

    pub fn conductivity_model(&self) -> ConductivityModel {
        ConductivityModel {
            intra_longitudinal: self.conductivity.intra_longitudinal_msiemens_per_cm2,
            intra_transverse: self.conductivity.intra_transverse_msiemens_per_cm2,
            extra_longitudinal: self.conductivity.extra_longitudinal_msiemens_per_cm2,
            extra_transverse: self.conductivity.extra_transverse_msiemens_per_cm2,
            torso: self.conductivity.torso_msiemens_per_cm2,
            blood: self.conductivity.blood_msiemens_per_cm2,
        }
    }

    pub fn ap_template(&self) -> ApTemplate {
        ApTemplate {
            v_rest: self.activation.v_rest_mv,
            v_dep: self.activation.v_depolarized_mv,
            epsilon: self.activation.upstroke_width_ms,
        }
    }

    /// Uniform time grid `0, step, ..., <= end` (ms).
    pub fn time_grid(&self) -> Vec<f64> {
        let n = (self.time.end_ms / self.time.step_ms).round() as usize;
        (0..=n).map(|i| i as f64 * self.time.step_ms).collect()
    }

    pub fn density_kinds(&self) -> Result<Vec<DensityKindSpec>> {
        self.densities
            .kinds
            .iter()
            .map(|k| match k.as_str() {
                "uniform" => Ok(DensityKindSpec::Uniform),
                "gaussian" => Ok(DensityKindSpec::Gaussian),
                "dirac" => Ok(DensityKindSpec::Dirac),
                other => Err(Error::Config(format!("unknown density kind '{other}'"))),
            })
            .collect()
    }

    /// Canonical serialization used for the run manifest checksum.
    pub fn canonical_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The idealized benchmark at full resolution.
    pub fn benchmark() -> Self {
        use std::f64::consts::PI;
        RunConfig {
            geometry: GeometrySection {
                torso_semi_axis_x_cm: 10.0,
                torso_semi_axis_y_cm: 15.0,
                heart_center_x_cm: -4.0,
                heart_center_y_cm: 2.0,
                endocardium_radius_cm: 2.0,
                epicardium_radius_cm: 3.0,
                heart_edge_cm: 0.04,
                torso_edge_cm: 0.5,
            },
            conductivity: ConductivitySection {
                intra_longitudinal_msiemens_per_cm2: 3.0,
                intra_transverse_msiemens_per_cm2: 0.3,
                extra_longitudinal_msiemens_per_cm2: 3.0,
                extra_transverse_msiemens_per_cm2: 1.2,
                torso_msiemens_per_cm2: 2.0,
                blood_msiemens_per_cm2: 6.0,
            },
            activation: ActivationSection {
                cv_longitudinal_cm_per_s: 65.0,
                source_x_cm: -2.0,
                source_y_cm: 2.0,
                heat_step_ms: 4.0,
                v_rest_mv: -85.0,
                v_depolarized_mv: 30.0,
                upstroke_width_ms: 0.4,
            },
            time: TimeSection {
                end_ms: 120.0,
                step_ms: 1.0,
            },
            solver: SolverSection {
                tolerance: 1e-10,
                cholesky_tolerance: 1e-10,
                max_iterations_per_node: 10,
            },
            electrodes: vec![
                ElectrodeSection {
                    label: "VL".into(),
                    angle_rad: 0.75 * PI,
                    spread_cm: 1.5,
                },
                ElectrodeSection {
                    label: "VR".into(),
                    angle_rad: 0.25 * PI,
                    spread_cm: 1.5,
                },
                ElectrodeSection {
                    label: "VF".into(),
                    angle_rad: 1.5 * PI,
                    spread_cm: 1.5,
                },
                ElectrodeSection {
                    label: "V1".into(),
                    angle_rad: PI,
                    spread_cm: 1.5,
                },
            ],
            leads: vec![
                LeadSection {
                    label: "II".into(),
                    electrodes: vec!["VL".into(), "VR".into(), "VF".into(), "V1".into()],
                    weights: vec!["-1".into(), "0".into(), "1".into(), "0".into()],
                },
                LeadSection {
                    label: "V1".into(),
                    electrodes: vec!["VL".into(), "VR".into(), "VF".into(), "V1".into()],
                    weights: vec!["-1/3".into(), "-1/3".into(), "-1/3".into(), "1".into()],
                },
            ],
            densities: DensitiesSection {
                kinds: vec!["uniform".into(), "gaussian".into()],
            },
            run: RunSection {
                seed: 42,
                output_dir: "out".into(),
            },
        }
    }

    /// Benchmark anatomy at a 4x coarser resolution.
    pub fn desk() -> Self {
        let mut cfg = Self::benchmark();
        cfg.geometry.heart_edge_cm = 0.16;
        cfg.geometry.torso_edge_cm = 2.0;
        cfg
    }

    /// Very coarse mesh (a few hundred nodes) for dense-oracle runs.
    /// The boundary is too coarse to carry the Gaussian spread, so only
    /// the uniform and degenerate kinds run here.
    pub fn tiny() -> Self {
        let mut cfg = Self::benchmark();
        cfg.geometry.heart_edge_cm = 0.35;
        cfg.geometry.torso_edge_cm = 2.8;
        cfg.densities.kinds = vec!["uniform".into(), "dirac".into()];
        cfg
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DensityKindSpec {
    Uniform,
    Gaussian,
    Dirac,
}

impl DensityKindSpec {
    pub fn label(&self) -> &'static str {
        match self {
            DensityKindSpec::Uniform => "uniform",
            DensityKindSpec::Gaussian => "gaussian",
            DensityKindSpec::Dirac => "dirac",
        }
    }

    pub fn matches(&self, kind: &DensityKind) -> bool {
        matches!(
            (self, kind),
            (DensityKindSpec::Uniform, DensityKind::Uniform { .. })
                | (DensityKindSpec::Gaussian, DensityKind::Gaussian { .. })
                | (DensityKindSpec::Dirac, DensityKind::Dirac)
        )
    }
}

fn lookup<'a>(value: &'a toml::Value, path: &str) -> Option<&'a toml::Value> {
    let mut cur = value;
    for part in path.split('.') {
        cur = cur.get(part)?;
    }
    Some(cur)
}
