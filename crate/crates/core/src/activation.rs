//! Activation model: anisotropic eikonal solve via the heat method and
//! the action-potential template that turns arrival times into a
//! transmembrane potential series.
//!
//! Units: lengths in cm, times in ms, potentials in mV, conductivities in
//! mS/cm^2. Conduction velocities are configured in cm/s and converted on
//! entry.
//!
//! The eikonal solve follows the heat-method recipe with the anisotropic
//! operator `div(D grad .)`:
//! 1. one implicit heat step from a nodal delta at the source;
//! 2. per-triangle unit descent directions in the metric induced by `D`;
//! 3. a least-squares recovery of the arrival time by a singular Poisson
//!    solve, shifted so the source vertex reads zero (small negative
//!    artifacts are clamped).
//!
//! The heat step is solved by a banded direct factorization: its solution
//! decays exponentially away from the source, and only a direct solve
//! keeps the far-field gradient directions meaningful.

use crate::assembly::{
    assemble_submesh_stiffness, submesh_lumped_mass, tensor_apply, ConductivityModel,
    SparseMatrix, StiffnessMatrix, Tensor2,
};
use crate::error::{Error, Result};
use crate::linsolve::{solve_singular, BandedCholesky, SolveOptions};
use crate::mesh::SubMesh;

/// Velocity tensor field of the eikonal model on a heart submesh.
#[derive(Debug, Clone)]
pub struct ActivationModel {
    /// `D = alpha * G_m` per submesh triangle (cm^2/ms^2).
    pub tensors: Vec<Tensor2>,
    /// Calibration factor relating `D` to the monodomain tensor.
    pub alpha: f64,
    /// Heat step length (ms).
    pub heat_dt: f64,
}

impl ActivationModel {
    /// Isotropic model with wave speed `v` (cm/ms) everywhere; used by
    /// calibration tests against analytic distances.
    pub fn isotropic(sub: &SubMesh, v: f64, heat_dt: f64) -> Self {
        let d = v * v;
        ActivationModel {
            tensors: vec![[[d, 0.0], [0.0, d]]; sub.triangles.len()],
            alpha: d,
            heat_dt,
        }
    }
}

/// Build the conduction tensor field `D = alpha G_m`, with `alpha` chosen
/// so the plane-wave speed along the fiber equals `cv_long` (cm/s).
pub fn monodomain_tensor(
    conductivity: &ConductivityModel,
    sub: &SubMesh,
    cv_long_cm_per_s: f64,
    heat_dt: f64,
) -> Result<ActivationModel> {
    if !(cv_long_cm_per_s > 0.0) {
        return Err(Error::Activation(format!(
            "conduction velocity must be positive, got {cv_long_cm_per_s}"
        )));
    }
    if !(heat_dt > 0.0) {
        return Err(Error::Activation("heat step must be positive".into()));
    }
    let cv = cv_long_cm_per_s / 1000.0; // cm/ms
    let sl = conductivity.intra_longitudinal + conductivity.extra_longitudinal;
    if !(sl > 0.0) {
        return Err(Error::Activation("singular intra + extra tensor".into()));
    }
    let gm_long = conductivity.intra_longitudinal * conductivity.extra_longitudinal / sl;
    let alpha = cv * cv / gm_long;
    let tensors = sub
        .triangles
        .iter()
        .enumerate()
        .map(|(t, _)| {
            let f = sub.fibers[t].ok_or_else(|| {
                Error::Activation(format!("submesh triangle {t} has no fiber"))
            })?;
            let gm = conductivity.monodomain_tensor(f)?;
            Ok([
                [alpha * gm[0][0], alpha * gm[0][1]],
                [alpha * gm[1][0], alpha * gm[1][1]],
            ])
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ActivationModel {
        tensors,
        alpha,
        heat_dt,
    })
}

/// Nodal first-arrival times on the heart submesh (ms).
#[derive(Debug, Clone)]
pub struct ActivationMap {
    pub tau: Vec<f64>,
    pub source_vertex: usize,
}

/// Solve the anisotropic eikonal equation by the heat method.
pub fn solve_eikonal_heat(
    sub: &SubMesh,
    model: &ActivationModel,
    source: [f64; 2],
    opts: &SolveOptions,
) -> Result<ActivationMap> {
    if model.tensors.len() != sub.triangles.len() {
        return Err(Error::Dimension(format!(
            "{} tensors for {} triangles",
            model.tensors.len(),
            sub.triangles.len()
        )));
    }
    let n = sub.n_vertices();
    let src = sub.nearest_vertex(source);

    let stiffness = assemble_submesh_stiffness(sub, |t| model.tensors[t])?;
    let lumped = submesh_lumped_mass(sub);

    // single implicit heat step from a nodal delta
    let mut heat = stiffness.clone();
    scale_values(&mut heat, model.heat_dt);
    add_diagonal(&mut heat, &lumped);
    let chol = BandedCholesky::factor(&heat)?;
    let mut delta = vec![0.0; n];
    delta[src] = 1.0;
    let v = chol.solve(&delta);

    // per-triangle unit descent direction in the D metric
    let mut directions = Vec::with_capacity(sub.triangles.len());
    for (t, tri) in sub.triangles.iter().enumerate() {
        let p = tri.map(|i| sub.vertices[i]);
        let (grads, _) = crate::assembly::p1_gradients(p);
        let mut g = [0.0f64; 2];
        for i in 0..3 {
            g[0] += v[tri[i]] * grads[i][0];
            g[1] += v[tri[i]] * grads[i][1];
        }
        let d = &model.tensors[t];
        let dg = tensor_apply(d, g);
        let q = g[0] * dg[0] + g[1] * dg[1];
        if !(q > 1e-280) {
            return Err(Error::Activation(format!(
                "heat solution has a vanishing gradient on triangle {t}"
            )));
        }
        let scale = -1.0 / q.sqrt();
        directions.push([g[0] * scale, g[1] * scale]);
    }

    // least-squares recovery: solve div(D grad tau) = div(D Y)
    let mut rhs = vec![0.0; n];
    for (t, tri) in sub.triangles.iter().enumerate() {
        let p = tri.map(|i| sub.vertices[i]);
        let (grads, area) = crate::assembly::p1_gradients(p);
        let flux = tensor_apply(&model.tensors[t], directions[t]);
        for j in 0..3 {
            rhs[tri[j]] += area * (flux[0] * grads[j][0] + flux[1] * grads[j][1]);
        }
    }
    let k = StiffnessMatrix { matrix: stiffness };
    let (mut tau, _) = solve_singular(&k, &rhs, opts)?;

    let shift = tau[src];
    for t in tau.iter_mut() {
        *t = (*t - shift).max(0.0);
    }
    Ok(ActivationMap {
        tau,
        source_vertex: src,
    })
}

fn scale_values(m: &mut SparseMatrix, s: f64) {
    for v in m.values.iter_mut() {
        *v *= s;
    }
}

fn add_diagonal(m: &mut SparseMatrix, d: &[f64]) {
    for r in 0..m.n {
        for k in m.row_ptr[r]..m.row_ptr[r + 1] {
            if m.col_idx[k] == r {
                m.values[k] += d[r];
            }
        }
    }
}

/// Action potential template: resting-to-depolarized upstroke of width
/// `epsilon` (ms).
#[derive(Debug, Clone, Copy)]
pub struct ApTemplate {
    pub v_rest: f64,
    pub v_dep: f64,
    pub epsilon: f64,
}

impl Default for ApTemplate {
    fn default() -> Self {
        ApTemplate {
            v_rest: -85.0,
            v_dep: 30.0,
            epsilon: 0.4,
        }
    }
}

impl ApTemplate {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_dep > self.v_rest) {
            return Err(Error::Activation(
                "depolarized potential must exceed the resting potential".into(),
            ));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Activation("upstroke width must be positive".into()));
        }
        Ok(())
    }

    /// Template value at time-since-activation `s` (ms).
    pub fn value(&self, s: f64) -> f64 {
        self.v_rest + 0.5 * (self.v_dep - self.v_rest) * (1.0 + (s / self.epsilon).tanh())
    }
}

/// Evaluate `Vm(x, t) = U(t - tau(x))` on the parent mesh for each time in
/// the grid. Vertices outside the submesh read the resting potential.
pub fn transmembrane_series(
    sub: &SubMesh,
    map: &ActivationMap,
    template: &ApTemplate,
    times: &[f64],
) -> Result<Vec<Vec<f64>>> {
    template.validate()?;
    if map.tau.len() != sub.n_vertices() {
        return Err(Error::Dimension(format!(
            "activation map covers {} vertices, submesh has {}",
            map.tau.len(),
            sub.n_vertices()
        )));
    }
    Ok(times
        .iter()
        .map(|&t| {
            let local: Vec<f64> = map.tau.iter().map(|&tau| template.value(t - tau)).collect();
            sub.scatter(&local, template.v_rest)
        })
        .collect())
}
