//! Galerkin assembly: stiffness matrix, boundary loads, transmembrane
//! loads and the boundary correlation matrix.
//!
//! Linear elements on triangles. Gradients are constant per element, so
//! element integrals are exact. Boundary integrals share the two-point
//! Gauss rule of [`crate::quadrature`].

use crate::density::{DensityKind, JointDensityModel, PairwiseMarginals};
use crate::ecg::LeadDefinition;
use crate::error::{Error, Result};
use crate::mesh::{BoundaryPoint, FiberField, Region, SubMesh, TriMesh};
use crate::quadrature::{boundary_mass_matrix, pl_basis_load, weighted_boundary_mass};
use nalgebra::DMatrix;

/// Symmetric 2x2 conductivity tensor.
pub type Tensor2 = [[f64; 2]; 2];

pub(crate) fn tensor_apply(g: &Tensor2, v: [f64; 2]) -> [f64; 2] {
    [
        g[0][0] * v[0] + g[0][1] * v[1],
        g[1][0] * v[0] + g[1][1] * v[1],
    ]
}

fn spd_2x2(g: &Tensor2) -> bool {
    g[0][0] > 0.0 && g[0][0] * g[1][1] - g[0][1] * g[1][0] > 0.0
}

/// Transversely isotropic tensor `trans * I + (long - trans) f f^T`.
fn aniso_tensor(long: f64, trans: f64, f: [f64; 2]) -> Tensor2 {
    [
        [trans + (long - trans) * f[0] * f[0], (long - trans) * f[0] * f[1]],
        [(long - trans) * f[0] * f[1], trans + (long - trans) * f[1] * f[1]],
    ]
}

/// Regional conductivities (mS/cm^2) and the derived per-triangle tensors.
#[derive(Debug, Clone, Copy)]
pub struct ConductivityModel {
    pub intra_longitudinal: f64,
    pub intra_transverse: f64,
    pub extra_longitudinal: f64,
    pub extra_transverse: f64,
    pub torso: f64,
    pub blood: f64,
}

impl Default for ConductivityModel {
    /// Values of the idealized 2-D benchmark.
    fn default() -> Self {
        ConductivityModel {
            intra_longitudinal: 3.0,
            intra_transverse: 0.3,
            extra_longitudinal: 3.0,
            extra_transverse: 1.2,
            torso: 2.0,
            blood: 6.0,
        }
    }
}

impl ConductivityModel {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.intra_longitudinal,
            self.intra_transverse,
            self.extra_longitudinal,
            self.extra_transverse,
            self.torso,
            self.blood,
        ];
        if all.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::Assembly("conductivities must be positive".into()));
        }
        Ok(())
    }

    /// Intracellular tensor on a heart triangle with fiber `f`.
    pub fn intra_tensor(&self, f: [f64; 2]) -> Tensor2 {
        aniso_tensor(self.intra_longitudinal, self.intra_transverse, f)
    }

    /// Extracellular tensor on a heart triangle with fiber `f`.
    pub fn extra_tensor(&self, f: [f64; 2]) -> Tensor2 {
        aniso_tensor(self.extra_longitudinal, self.extra_transverse, f)
    }

    /// Bulk tensor of the quasi-static problem: intra + extra in the heart,
    /// isotropic torso/blood elsewhere.
    pub fn bulk_tensor(&self, region: Region, fiber: Option<[f64; 2]>) -> Result<Tensor2> {
        match region {
            Region::Heart => {
                let f = fiber.ok_or_else(|| {
                    Error::Assembly("heart triangle without fiber direction".into())
                })?;
                Ok(aniso_tensor(
                    self.intra_longitudinal + self.extra_longitudinal,
                    self.intra_transverse + self.extra_transverse,
                    f,
                ))
            }
            Region::Torso => Ok([[self.torso, 0.0], [0.0, self.torso]]),
            Region::Blood => Ok([[self.blood, 0.0], [0.0, self.blood]]),
        }
    }

    /// Harmonic combination `G_i (G_i + G_e)^-1 G_e` that sets the
    /// conduction anisotropy of the activation model.
    pub fn monodomain_tensor(&self, f: [f64; 2]) -> Result<Tensor2> {
        let sl = self.intra_longitudinal + self.extra_longitudinal;
        let st = self.intra_transverse + self.extra_transverse;
        if sl <= 0.0 || st <= 0.0 {
            return Err(Error::Assembly("singular intra + extra tensor".into()));
        }
        let hl = self.intra_longitudinal * self.extra_longitudinal / sl;
        let ht = self.intra_transverse * self.extra_transverse / st;
        Ok(aniso_tensor(hl, ht, f))
    }
}

// ---------------------------------------------------------------------------
// Sparse matrix
// ---------------------------------------------------------------------------

/// Compressed sparse row matrix (full symmetric storage, sorted columns).
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<f64>,
}

impl SparseMatrix {
    pub fn from_triplets(n: usize, triplets: &mut Vec<(usize, usize, f64)>) -> Self {
        triplets.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut row_ptr = vec![0usize; n + 1];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        let mut i = 0;
        while i < triplets.len() {
            let (r, c, _) = triplets[i];
            let mut v = 0.0;
            while i < triplets.len() && triplets[i].0 == r && triplets[i].1 == c {
                v += triplets[i].2;
                i += 1;
            }
            col_idx.push(c);
            values.push(v);
            row_ptr[r + 1] = col_idx.len();
        }
        for r in 0..n {
            if row_ptr[r + 1] < row_ptr[r] {
                row_ptr[r + 1] = row_ptr[r];
            }
        }
        SparseMatrix {
            n,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        for r in 0..self.n {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.col_idx[k] == r {
                    d[r] = self.values[k];
                }
            }
        }
        d
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.col_idx[k])] += self.values[k];
            }
        }
        m
    }

    /// Undirected adjacency (excluding the diagonal), for orderings.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for r in 0..self.n {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                if c != r {
                    adj[r].push(c);
                }
            }
        }
        adj
    }
}

/// Stiffness matrix of the quasi-static conduction problem.
///
/// Symmetric positive semidefinite; the kernel is the constant vector on a
/// connected mesh.
#[derive(Debug, Clone)]
pub struct StiffnessMatrix {
    pub matrix: SparseMatrix,
}

impl StiffnessMatrix {
    pub fn n(&self) -> usize {
        self.matrix.n
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        self.matrix.matvec(x, y)
    }
}

/// P1 gradients of a triangle with counterclockwise vertices.
pub(crate) fn p1_gradients(p: [[f64; 2]; 3]) -> ([[f64; 2]; 3], f64) {
    let area = crate::mesh::signed_area(p[0], p[1], p[2]);
    let inv = 1.0 / (2.0 * area);
    let grad = |a: [f64; 2], b: [f64; 2]| [-(b[1] - a[1]) * inv, (b[0] - a[0]) * inv];
    // gradient of the basis at vertex i is built from the opposite edge
    (
        [grad(p[2], p[1]), grad(p[0], p[2]), grad(p[1], p[0])],
        area,
    )
}

fn element_stiffness(p: [[f64; 2]; 3], g: &Tensor2) -> [[f64; 3]; 3] {
    let (grads, area) = p1_gradients(p);
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        let gv = tensor_apply(g, grads[i]);
        for j in 0..3 {
            k[i][j] = area * (gv[0] * grads[j][0] + gv[1] * grads[j][1]);
        }
    }
    k
}

/// Assemble the bulk stiffness matrix of the mesh.
pub fn assemble_stiffness(
    mesh: &TriMesh,
    fibers: &FiberField,
    conductivity: &ConductivityModel,
) -> Result<StiffnessMatrix> {
    conductivity.validate()?;
    let mut triplets = Vec::with_capacity(9 * mesh.n_triangles());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let g = conductivity.bulk_tensor(tri.region, fibers.get(t))?;
        if !spd_2x2(&g) {
            return Err(Error::Assembly(format!(
                "element tensor on triangle {t} is not positive definite"
            )));
        }
        let p = tri.vertices.map(|v| mesh.vertices[v]);
        let ke = element_stiffness(p, &g);
        for i in 0..3 {
            for j in 0..3 {
                triplets.push((tri.vertices[i], tri.vertices[j], ke[i][j]));
            }
        }
    }
    Ok(StiffnessMatrix {
        matrix: SparseMatrix::from_triplets(mesh.n_vertices(), &mut triplets),
    })
}

/// Assemble a stiffness matrix on a submesh with one tensor per triangle.
pub fn assemble_submesh_stiffness(
    sub: &SubMesh,
    tensor: impl Fn(usize) -> Tensor2,
) -> Result<SparseMatrix> {
    let mut triplets = Vec::with_capacity(9 * sub.triangles.len());
    for (t, tri) in sub.triangles.iter().enumerate() {
        let g = tensor(t);
        if !spd_2x2(&g) {
            return Err(Error::Assembly(format!(
                "element tensor on submesh triangle {t} is not positive definite"
            )));
        }
        let p = tri.map(|v| sub.vertices[v]);
        let ke = element_stiffness(p, &g);
        for i in 0..3 {
            for j in 0..3 {
                triplets.push((tri[i], tri[j], ke[i][j]));
            }
        }
    }
    Ok(SparseMatrix::from_triplets(sub.n_vertices(), &mut triplets))
}

/// Lumped mass (dual areas) of a submesh.
pub fn submesh_lumped_mass(sub: &SubMesh) -> Vec<f64> {
    let mut m = vec![0.0; sub.n_vertices()];
    for (t, tri) in sub.triangles.iter().enumerate() {
        let third = sub.triangle_area(t) / 3.0;
        for &v in tri {
            m[v] += third;
        }
    }
    m
}

// ---------------------------------------------------------------------------
// Load vectors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LoadRole {
    /// Boundary data of the expected lead-field problem.
    Expected,
    /// Deterministic electrode pattern (barycentric deltas).
    Point,
    /// Transmembrane drive at one time instant.
    Transmembrane,
    /// Low-rank factor of the boundary correlation.
    CorrelationFactor,
}

#[derive(Debug, Clone)]
pub struct LoadVector {
    pub values: Vec<f64>,
    pub role: LoadRole,
}

impl LoadVector {
    pub fn negated(&self) -> Vec<f64> {
        self.values.iter().map(|v| -v).collect()
    }
}

/// Boundary load of a single electrode density against the nodal basis
/// (boundary-loop indexing). Degenerate densities contribute their point
/// masses directly, which makes the expected load of Dirac marginals equal
/// the deterministic point load bit for bit.
pub(crate) fn single_electrode_load(
    mesh: &TriMesh,
    density: &crate::density::DensityField,
) -> Vec<f64> {
    match density.kind {
        DensityKind::Dirac => density.nodal.clone(),
        _ => pl_basis_load(mesh, &density.nodal),
    }
}

fn scatter_loop_to_global(mesh: &TriMesh, loop_values: &[f64], scale: f64, out: &mut [f64]) {
    for (i, &v) in loop_values.iter().enumerate() {
        if v != 0.0 {
            out[mesh.boundary.loop_vertices[i]] += scale * v;
        }
    }
}

/// Expected boundary load: weighted sum of the electrode marginals
/// integrated against the basis.
pub fn assemble_expected_load(
    mesh: &TriMesh,
    densities: &JointDensityModel,
    lead: &LeadDefinition,
) -> Result<LoadVector> {
    lead.validate()?;
    if densities.electrodes.len() != lead.electrodes.len() {
        return Err(Error::Dimension(format!(
            "{} densities for {} electrodes",
            densities.electrodes.len(),
            lead.electrodes.len()
        )));
    }
    let mut values = vec![0.0; mesh.n_vertices()];
    for (density, weight) in densities.electrodes.iter().zip(lead.weight_values()) {
        let b = single_electrode_load(mesh, density);
        scatter_loop_to_global(mesh, &b, weight, &mut values);
    }
    Ok(LoadVector {
        values,
        role: LoadRole::Expected,
    })
}

/// Deterministic point load of electrodes at fixed boundary positions.
pub fn assemble_point_load(
    mesh: &TriMesh,
    electrodes: &[BoundaryPoint],
    lead: &LeadDefinition,
) -> Result<LoadVector> {
    lead.validate()?;
    if electrodes.len() != lead.electrodes.len() {
        return Err(Error::Dimension(format!(
            "{} positions for {} electrodes",
            electrodes.len(),
            lead.electrodes.len()
        )));
    }
    let densities: Vec<_> = electrodes
        .iter()
        .map(|p| crate::density::dirac_density(mesh, p))
        .collect();
    let mut values = vec![0.0; mesh.n_vertices()];
    for (density, weight) in densities.iter().zip(lead.weight_values()) {
        let b = single_electrode_load(mesh, density);
        scatter_loop_to_global(mesh, &b, weight, &mut values);
    }
    Ok(LoadVector {
        values,
        role: LoadRole::Point,
    })
}

/// Transmembrane load at one time instant:
/// entries are integrals of `G_i grad(Vm) . grad(phi_j)` over the heart.
pub fn assemble_vm_load(
    mesh: &TriMesh,
    fibers: &FiberField,
    conductivity: &ConductivityModel,
    vm_nodal: &[f64],
) -> LoadVector {
    let mut values = vec![0.0; mesh.n_vertices()];
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if tri.region != Region::Heart {
            continue;
        }
        let f = fibers.get(t).expect("heart triangle has a fiber");
        let gi = conductivity.intra_tensor(f);
        let p = tri.vertices.map(|v| mesh.vertices[v]);
        let (grads, area) = p1_gradients(p);
        let mut grad_vm = [0.0f64; 2];
        for i in 0..3 {
            let vm = vm_nodal[tri.vertices[i]];
            grad_vm[0] += vm * grads[i][0];
            grad_vm[1] += vm * grads[i][1];
        }
        let flux = tensor_apply(&gi, grad_vm);
        for j in 0..3 {
            values[tri.vertices[j]] += area * (flux[0] * grads[j][0] + flux[1] * grads[j][1]);
        }
    }
    LoadVector {
        values,
        role: LoadRole::Transmembrane,
    }
}

// ---------------------------------------------------------------------------
// Boundary correlation matrix
// ---------------------------------------------------------------------------

/// Correlation of the random boundary data, assembled on boundary loop
/// nodes (interior rows and columns are identically zero and not stored).
#[derive(Debug, Clone)]
pub struct CorrelationMatrix {
    pub matrix: DMatrix<f64>,
}

impl CorrelationMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.diagonal().sum()
    }
}

/// Assemble the boundary correlation matrix of the lead's random electrode
/// pattern: per-electrode weighted mass terms plus pairwise cross terms.
pub fn assemble_correlation(
    mesh: &TriMesh,
    densities: &JointDensityModel,
    lead: &LeadDefinition,
) -> Result<CorrelationMatrix> {
    lead.validate()?;
    let n_e = lead.electrodes.len();
    if densities.electrodes.len() != n_e {
        return Err(Error::Dimension(format!(
            "{} densities for {} electrodes",
            densities.electrodes.len(),
            n_e
        )));
    }
    let nb = mesh.boundary.n();
    let weights = lead.weight_values();
    let mut r = DMatrix::zeros(nb, nb);

    // diagonal-in-position term: a_l^2 * Galerkin projection of
    // rho_l(x) delta_x(x')
    for (density, &a) in densities.electrodes.iter().zip(&weights) {
        let a2 = a * a;
        match density.kind {
            DensityKind::Dirac => {
                for (i, &wi) in density.nodal.iter().enumerate() {
                    if wi == 0.0 {
                        continue;
                    }
                    for (j, &wj) in density.nodal.iter().enumerate() {
                        if wj != 0.0 {
                            r[(i, j)] += a2 * wi * wj;
                        }
                    }
                }
            }
            _ => {
                let m = weighted_boundary_mass(mesh, &density.nodal);
                r += m * a2;
            }
        }
    }

    // pairwise cross terms
    match &densities.pairwise {
        PairwiseMarginals::Independent => {
            let loads: Vec<Vec<f64>> = densities
                .electrodes
                .iter()
                .map(|d| single_electrode_load(mesh, d))
                .collect();
            for l in 0..n_e {
                for lp in 0..n_e {
                    if l == lp {
                        continue;
                    }
                    let scale = weights[l] * weights[lp];
                    for (i, &bi) in loads[l].iter().enumerate() {
                        if bi == 0.0 {
                            continue;
                        }
                        for (j, &bj) in loads[lp].iter().enumerate() {
                            if bj != 0.0 {
                                r[(i, j)] += scale * bi * bj;
                            }
                        }
                    }
                }
            }
        }
        PairwiseMarginals::Explicit(pairs) => {
            let mass = boundary_mass_matrix(mesh);
            for l in 0..n_e {
                for lp in 0..n_e {
                    if l == lp {
                        continue;
                    }
                    let rho = pairs.get(&(l, lp)).ok_or_else(|| {
                        Error::Density(format!("missing pairwise marginal ({l}, {lp})"))
                    })?;
                    if rho.nrows() != nb || rho.ncols() != nb {
                        return Err(Error::Dimension(format!(
                            "pairwise marginal ({l}, {lp}) is {}x{}, boundary has {nb} nodes",
                            rho.nrows(),
                            rho.ncols()
                        )));
                    }
                    r += (&mass * rho * &mass) * (weights[l] * weights[lp]);
                }
            }
        }
    }

    Ok(CorrelationMatrix { matrix: r })
}

/// Scatter a boundary-loop-indexed vector into a full nodal vector.
pub fn scatter_boundary_vector(mesh: &TriMesh, loop_values: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; mesh.n_vertices()];
    scatter_loop_to_global(mesh, loop_values, 1.0, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{dirac_density, uniform_density, JointDensityModel};
    use crate::ecg::LeadDefinition;
    use crate::mesh::{build_idealized_geometry, electrode_anchor, GeometryParams, Triangle};
    use crate::quadrature::GAUSS_2PT;

    fn coarse() -> (TriMesh, FiberField) {
        build_idealized_geometry(&GeometryParams::default().scaled_edges(8.0)).unwrap()
    }

    fn lead_ii(mesh: &TriMesh) -> (LeadDefinition, Vec<BoundaryPoint>) {
        let lead = LeadDefinition::standard_lead_ii();
        let anchors = lead
            .angles
            .iter()
            .map(|&th| electrode_anchor(mesh, th))
            .collect();
        (lead, anchors)
    }

    #[test]
    fn unit_right_triangle_element_matrix() {
        let p = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let ke = element_stiffness(p, &[[1.0, 0.0], [0.0, 1.0]]);
        let expect = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!(
                    (ke[i][j] - expect[i][j]).abs() < 1e-14,
                    "K[{i}][{j}] = {}",
                    ke[i][j]
                );
            }
        }
    }

    #[test]
    fn stiffness_is_symmetric_with_constant_kernel() {
        let (mesh, fibers) = coarse();
        let cond = ConductivityModel::default();
        let k = assemble_stiffness(&mesh, &fibers, &cond).unwrap();
        let ones = vec![1.0; k.n()];
        let mut y = vec![0.0; k.n()];
        k.matvec(&ones, &mut y);
        let scale: f64 = k.matrix.values.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(y.iter().all(|&v| v.abs() <= 1e-12 * scale));

        let dense = k.matrix.to_dense();
        let asym = (&dense - dense.transpose()).abs().max();
        assert!(asym <= 1e-12 * scale);
    }

    #[test]
    fn stiffness_is_linear_in_the_tensor() {
        let (mesh, fibers) = coarse();
        let cond = ConductivityModel::default();
        let doubled = ConductivityModel {
            intra_longitudinal: 2.0 * cond.intra_longitudinal,
            intra_transverse: 2.0 * cond.intra_transverse,
            extra_longitudinal: 2.0 * cond.extra_longitudinal,
            extra_transverse: 2.0 * cond.extra_transverse,
            torso: 2.0 * cond.torso,
            blood: 2.0 * cond.blood,
        };
        let k1 = assemble_stiffness(&mesh, &fibers, &cond).unwrap();
        let k2 = assemble_stiffness(&mesh, &fibers, &doubled).unwrap();
        for (a, b) in k1.matrix.values.iter().zip(&k2.matrix.values) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1e-30));
        }
    }

    #[test]
    fn stiffness_has_one_zero_eigenvalue_on_small_mesh() {
        let (mesh, fibers) = coarse();
        assert!(mesh.n_vertices() <= 500, "test mesh too large");
        let k = assemble_stiffness(&mesh, &fibers, &ConductivityModel::default()).unwrap();
        let dense = k.matrix.to_dense();
        let sym = (dense.clone() + dense.transpose()) * 0.5;
        let eig = sym.symmetric_eigen();
        let mut lambda: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        lambda.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let lmax = lambda[lambda.len() - 1];
        assert!(lambda[0].abs() <= 1e-10 * lmax, "kernel eigenvalue {}", lambda[0]);
        assert!(lambda[1] > 1e-8 * lmax, "second eigenvalue {}", lambda[1]);
    }

    #[test]
    fn point_load_structure_for_lead_ii() {
        let (mesh, _) = coarse();
        let (lead, anchors) = lead_ii(&mesh);
        let g = assemble_point_load(&mesh, &anchors, &lead).unwrap();
        let nonzero: Vec<usize> = g
            .values
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(i, _)| i)
            .collect();
        // two electrodes carry nonzero weight, each split over <= 2 nodes
        assert!(nonzero.len() <= 4 && nonzero.len() >= 2, "{nonzero:?}");
        let sum: f64 = g.values.iter().sum();
        let norm1: f64 = g.values.iter().map(|v| v.abs()).sum();
        assert!(sum.abs() <= 1e-12 * norm1);
    }

    #[test]
    fn point_load_at_a_vertex_is_a_single_entry() {
        let (mesh, _) = coarse();
        let v3 = mesh.boundary_vertex_position(3);
        let v9 = mesh.boundary_vertex_position(9);
        let lead = LeadDefinition::two_electrode("test", "A", "B", 0.0, 1.0);
        let points = vec![mesh.project_to_boundary(v3), mesh.project_to_boundary(v9)];
        let g = assemble_point_load(&mesh, &points, &lead).unwrap();
        let gl3 = mesh.boundary.loop_vertices[3];
        let gl9 = mesh.boundary.loop_vertices[9];
        assert_eq!(g.values[gl3], -1.0);
        assert_eq!(g.values[gl9], 1.0);
        assert_eq!(g.values.iter().filter(|&&v| v != 0.0).count(), 2);
    }

    #[test]
    fn expected_load_of_dirac_densities_equals_point_load() {
        let (mesh, _) = coarse();
        let (lead, anchors) = lead_ii(&mesh);
        let joint =
            JointDensityModel::independent(anchors.iter().map(|p| dirac_density(&mesh, p)).collect());
        let expected = assemble_expected_load(&mesh, &joint, &lead).unwrap();
        let point = assemble_point_load(&mesh, &anchors, &lead).unwrap();
        assert_eq!(expected.values, point.values);
    }

    #[test]
    fn expected_load_signs_and_zero_sum() {
        let (mesh, _) = coarse();
        let (lead, anchors) = lead_ii(&mesh);
        let joint = JointDensityModel::independent(
            anchors
                .iter()
                .map(|p| uniform_density(&mesh, p, 1.5).unwrap())
                .collect(),
        );
        let g = assemble_expected_load(&mesh, &joint, &lead).unwrap();
        let sum: f64 = g.values.iter().sum();
        let norm1: f64 = g.values.iter().map(|v| v.abs()).sum();
        assert!(sum.abs() <= 1e-12 * norm1, "sum {sum} vs norm {norm1}");

        // disjoint supports of VF (weight +1) and VL (weight -1): entries
        // near VF positive, near VL negative
        let vf = &anchors[lead.electrodes.iter().position(|e| e == "VF").unwrap()];
        let vl = &anchors[lead.electrodes.iter().position(|e| e == "VL").unwrap()];
        for (i, &v) in g.values.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let pos = mesh.vertices[i];
            let d_vf = (pos[0] - vf.position[0]).hypot(pos[1] - vf.position[1]);
            let d_vl = (pos[0] - vl.position[0]).hypot(pos[1] - vl.position[1]);
            if d_vf < d_vl {
                assert!(v > 0.0, "entry near VF has sign {v}");
            } else {
                assert!(v < 0.0, "entry near VL has sign {v}");
            }
        }
    }

    #[test]
    fn vm_load_on_a_single_triangle() {
        // one isotropic heart triangle, Vm linear with known gradient
        let vertices = vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let triangles = vec![Triangle {
            vertices: [0, 1, 2],
            region: Region::Heart,
        }];
        let boundary = crate::mesh::extract_boundary(&vertices, &triangles).unwrap();
        let mesh = TriMesh {
            vertices,
            triangles,
            boundary,
        };
        let fibers = FiberField::new(vec![Some([1.0, 0.0])]);
        let cond = ConductivityModel {
            intra_longitudinal: 2.0,
            intra_transverse: 2.0,
            extra_longitudinal: 2.0,
            extra_transverse: 2.0,
            torso: 1.0,
            blood: 1.0,
        };
        // Vm = 3x + 5y  (gradient (3, 5)), G_i = 2 I, area = 1/2
        let vm = vec![0.0, 3.0, 5.0];
        let load = assemble_vm_load(&mesh, &fibers, &cond, &vm);
        // entries: area * (2*(3,5)) . grad(phi_j) with grads (-1,-1), (1,0), (0,1)
        let expect = [0.5 * (-6.0 - 10.0), 0.5 * 6.0, 0.5 * 10.0];
        for j in 0..3 {
            assert!((load.values[j] - expect[j]).abs() < 1e-14, "{:?}", load.values);
        }

        // constant Vm gives the zero vector
        let zero = assemble_vm_load(&mesh, &fibers, &cond, &vec![4.0; 3]);
        assert!(zero.values.iter().all(|&v| v == 0.0));

        // linearity in Vm
        let vm2: Vec<f64> = vm.iter().map(|v| 2.5 * v).collect();
        let load2 = assemble_vm_load(&mesh, &fibers, &cond, &vm2);
        for j in 0..3 {
            assert!((load2.values[j] - 2.5 * load.values[j]).abs() < 1e-13);
        }
    }

    #[test]
    fn correlation_of_dirac_densities_is_rank_one() {
        let (mesh, _) = coarse();
        let (lead, anchors) = lead_ii(&mesh);
        let joint =
            JointDensityModel::independent(anchors.iter().map(|p| dirac_density(&mesh, p)).collect());
        let r = assemble_correlation(&mesh, &joint, &lead).unwrap();
        let g = assemble_expected_load(&mesh, &joint, &lead).unwrap();
        // gather boundary-loop values of g
        let gl: Vec<f64> = mesh
            .boundary
            .loop_vertices
            .iter()
            .map(|&v| g.values[v])
            .collect();
        let nb = mesh.boundary.n();
        let mut err: f64 = 0.0;
        for i in 0..nb {
            for j in 0..nb {
                err = err.max((r.matrix[(i, j)] - gl[i] * gl[j]).abs());
            }
        }
        assert!(err <= 1e-14, "max deviation from rank-one {err}");
    }

    #[test]
    fn correlation_matches_hand_formula_for_lead_ii() {
        let (mesh, _) = coarse();
        let (lead, anchors) = lead_ii(&mesh);
        let densities: Vec<_> = anchors
            .iter()
            .map(|p| uniform_density(&mesh, p, 1.5).unwrap())
            .collect();
        let joint = JointDensityModel::independent(densities.clone());
        let r = assemble_correlation(&mesh, &joint, &lead).unwrap();

        // mass term of rho_VF + rho_VL minus the two rank-one cross terms
        let i_vf = lead.electrodes.iter().position(|e| e == "VF").unwrap();
        let i_vl = lead.electrodes.iter().position(|e| e == "VL").unwrap();
        let sum_rho: Vec<f64> = densities[i_vf]
            .nodal
            .iter()
            .zip(&densities[i_vl].nodal)
            .map(|(a, b)| a + b)
            .collect();
        let mut expect = weighted_boundary_mass(&mesh, &sum_rho);
        let b_vf = single_electrode_load(&mesh, &densities[i_vf]);
        let b_vl = single_electrode_load(&mesh, &densities[i_vl]);
        let nb = mesh.boundary.n();
        for i in 0..nb {
            for j in 0..nb {
                expect[(i, j)] -= b_vf[i] * b_vl[j] + b_vl[i] * b_vf[j];
            }
        }
        let diff = (&r.matrix - &expect).abs().max();
        let scale = expect.abs().max();
        assert!(diff <= 1e-12 * scale, "diff {diff}");
    }

    #[test]
    fn correlation_rows_annihilate_constants() {
        let (mesh, _) = coarse();
        let lead = LeadDefinition::standard_lead_v1();
        let anchors: Vec<_> = lead.angles.iter().map(|&t| electrode_anchor(&mesh, t)).collect();
        let joint = JointDensityModel::independent(
            anchors
                .iter()
                .map(|p| uniform_density(&mesh, p, 1.5).unwrap())
                .collect(),
        );
        let r = assemble_correlation(&mesh, &joint, &lead).unwrap();
        let trace = r.trace();
        let nb = r.dim();
        for i in 0..nb {
            let row_sum: f64 = (0..nb).map(|j| r.matrix[(i, j)]).sum();
            assert!(row_sum.abs() <= 1e-10 * trace, "row {i} sum {row_sum}");
        }
        let ones = nalgebra::DVector::from_element(nb, 1.0);
        let quad = (ones.transpose() * &r.matrix * &ones)[(0, 0)];
        assert!(quad.abs() <= 1e-10 * trace);
    }

    #[test]
    fn correlation_matches_brute_force_double_integral() {
        let (mesh, _) = coarse();
        let (lead, anchors) = lead_ii(&mesh);
        let densities: Vec<_> = anchors
            .iter()
            .map(|p| uniform_density(&mesh, p, 1.5).unwrap())
            .collect();
        let joint = JointDensityModel::independent(densities.clone());
        let r = assemble_correlation(&mesh, &joint, &lead).unwrap();

        // brute force: direct double quadrature over all segment pairs of
        // sum_l a_l^2 rho_l(x) delta + sum_{l!=l'} a_l a_l' rho_l(x) rho_l'(x')
        let nb = mesh.boundary.n();
        let weights = lead.weight_values();
        let mut brute = DMatrix::<f64>::zeros(nb, nb);
        for (l, rho) in densities.iter().enumerate() {
            let m = weighted_boundary_mass(&mesh, &rho.nodal);
            brute += m * (weights[l] * weights[l]);
        }
        for (l, rho_l) in densities.iter().enumerate() {
            for (lp, rho_lp) in densities.iter().enumerate() {
                if l == lp {
                    continue;
                }
                let scale = weights[l] * weights[lp];
                for si in 0..nb {
                    let hi = mesh.boundary.segment_length(si);
                    let (ra0, ra1) = (rho_l.nodal[si], rho_l.nodal[(si + 1) % nb]);
                    for sj in 0..nb {
                        let hj = mesh.boundary.segment_length(sj);
                        let (rb0, rb1) = (rho_lp.nodal[sj], rho_lp.nodal[(sj + 1) % nb]);
                        for &(x, wx) in &GAUSS_2PT {
                            for &(y, wy) in &GAUSS_2PT {
                                let fx = ra0 + (ra1 - ra0) * x;
                                let fy = rb0 + (rb1 - rb0) * y;
                                let w = scale * hi * hj * wx * wy * fx * fy;
                                let pi = [si, (si + 1) % nb];
                                let pj = [sj, (sj + 1) % nb];
                                let phix = [1.0 - x, x];
                                let phiy = [1.0 - y, y];
                                for a in 0..2 {
                                    for b in 0..2 {
                                        brute[(pi[a], pj[b])] += w * phix[a] * phiy[b];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        let diff = (&r.matrix - &brute).norm();
        let scale = brute.norm();
        assert!(diff <= 1e-12 * scale, "relative Frobenius {}", diff / scale);
    }

    #[test]
    fn expected_load_agrees_with_monte_carlo_point_loads() {
        use rand::SeedableRng;
        let (mesh, _) = coarse();
        let (lead, anchors) = lead_ii(&mesh);
        let densities: Vec<_> = anchors
            .iter()
            .map(|p| uniform_density(&mesh, p, 1.5).unwrap())
            .collect();
        let joint = JointDensityModel::independent(densities.clone());
        let g = assemble_expected_load(&mesh, &joint, &lead).unwrap();

        let n = 100_000;
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(11);
        let nv = mesh.n_vertices();
        let mut mean = vec![0.0f64; nv];
        let mut m2 = vec![0.0f64; nv];
        for s in 0..n {
            let points: Vec<_> = densities.iter().map(|d| d.sample(&mesh, &mut rng)).collect();
            let load = assemble_point_load(&mesh, &points, &lead).unwrap();
            let k = (s + 1) as f64;
            for (i, &v) in load.values.iter().enumerate() {
                let delta = v - mean[i];
                mean[i] += delta / k;
                m2[i] += delta * (v - mean[i]);
            }
        }
        for i in 0..nv {
            let se = (m2[i] / (n as f64 - 1.0) / n as f64).sqrt();
            let err = (mean[i] - g.values[i]).abs();
            assert!(
                err <= 3.0 * se + 1e-12,
                "entry {i}: err {err} vs 3 se {}",
                3.0 * se
            );
        }
    }
}
