//! Boundary-segment quadrature shared by density normalization and
//! Galerkin assembly.
//!
//! Everything on the boundary curve is piecewise linear, and every product
//! that gets integrated (density x basis x basis) is at most cubic per
//! segment, so the two-point Gauss rule is exact. Using one rule everywhere
//! makes normalization and assembly agree to rounding.

use crate::mesh::TriMesh;
use nalgebra::DMatrix;

/// Two-point Gauss rule on [0, 1]: (position, weight), weights sum to 1.
pub(crate) const GAUSS_2PT: [(f64, f64); 2] = [
    (0.5 - 0.288_675_134_594_812_9, 0.5),
    (0.5 + 0.288_675_134_594_812_9, 0.5),
];

/// Integral over the boundary of a piecewise-linear nodal field
/// (boundary-loop indexing).
pub fn pl_boundary_integral(mesh: &TriMesh, loop_values: &[f64]) -> f64 {
    let n = mesh.boundary.n();
    assert_eq!(loop_values.len(), n, "loop field has wrong length");
    let mut total = 0.0;
    for i in 0..n {
        let h = mesh.boundary.segment_length(i);
        let (a, b) = (loop_values[i], loop_values[(i + 1) % n]);
        total += h * GAUSS_2PT.iter().map(|&(x, w)| w * (a + (b - a) * x)).sum::<f64>();
    }
    total
}

/// Consistent boundary mass matrix on the loop nodes.
pub(crate) fn boundary_mass_matrix(mesh: &TriMesh) -> DMatrix<f64> {
    let n = mesh.boundary.n();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let h = mesh.boundary.segment_length(i);
        let j = (i + 1) % n;
        m[(i, i)] += h / 3.0;
        m[(j, j)] += h / 3.0;
        m[(i, j)] += h / 6.0;
        m[(j, i)] += h / 6.0;
    }
    m
}

/// Boundary mass matrix weighted by a piecewise-linear density
/// (the Galerkin projection of `rho(x) delta_x(x')`).
pub(crate) fn weighted_boundary_mass(mesh: &TriMesh, rho_loop: &[f64]) -> DMatrix<f64> {
    let n = mesh.boundary.n();
    assert_eq!(rho_loop.len(), n);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let h = mesh.boundary.segment_length(i);
        let j = (i + 1) % n;
        let (ra, rb) = (rho_loop[i], rho_loop[j]);
        let mut block = [[0.0f64; 2]; 2];
        for &(x, w) in &GAUSS_2PT {
            let rho = ra + (rb - ra) * x;
            let phi = [1.0 - x, x];
            for p in 0..2 {
                for q in 0..2 {
                    block[p][q] += w * rho * phi[p] * phi[q];
                }
            }
        }
        let ids = [i, j];
        for p in 0..2 {
            for q in 0..2 {
                m[(ids[p], ids[q])] += h * block[p][q];
            }
        }
    }
    m
}

/// Per-segment loads of a piecewise-linear density against the nodal basis:
/// `b_k = integral of rho * phi_k` over the boundary.
pub(crate) fn pl_basis_load(mesh: &TriMesh, rho_loop: &[f64]) -> Vec<f64> {
    let n = mesh.boundary.n();
    assert_eq!(rho_loop.len(), n);
    let mut b = vec![0.0; n];
    for i in 0..n {
        let h = mesh.boundary.segment_length(i);
        let j = (i + 1) % n;
        let (ra, rb) = (rho_loop[i], rho_loop[j]);
        for &(x, w) in &GAUSS_2PT {
            let rho = ra + (rb - ra) * x;
            b[i] += h * w * rho * (1.0 - x);
            b[j] += h * w * rho * x;
        }
    }
    b
}
