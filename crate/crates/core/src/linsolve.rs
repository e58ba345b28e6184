//! Linear solvers for the singular conduction systems and the
//! definite auxiliary systems of the activation model.
//!
//! The conduction stiffness matrix is symmetric positive semidefinite with
//! the constants as kernel on a connected mesh. Compatible systems are
//! solved by diagonally preconditioned conjugate gradients with the
//! iterate projected onto the mean-zero subspace at every step; the
//! reported solution is gauged to zero mean over all vertices.
//!
//! Two direct paths back the iterative one:
//! * a dense eigendecomposition pseudo-inverse for small meshes, used as
//!   the oracle for the iterative solver and by the tensor-product
//!   correlation oracle;
//! * a reverse Cuthill-McKee banded LDL^T factorization for the definite
//!   heat-step systems, whose solutions span too many orders of magnitude
//!   for an iterative residual tolerance to preserve far-field gradient
//!   directions.

use crate::assembly::{SparseMatrix, StiffnessMatrix};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Relative residual tolerance.
    pub tolerance: f64,
    /// Iteration cap; `None` means ten times the system size.
    pub max_iterations: Option<usize>,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tolerance: 1e-10,
            max_iterations: None,
        }
    }
}

impl SolveOptions {
    pub fn with_tolerance(tolerance: f64) -> Self {
        SolveOptions {
            tolerance,
            ..Default::default()
        }
    }
}

/// Outcome of a singular solve.
#[derive(Debug, Clone, Copy)]
pub struct SingularSolveReport {
    pub iterations: usize,
    pub relative_residual: f64,
    /// `|1^T b| / ||b||_1` of the right-hand side.
    pub compatibility_defect: f64,
}

const COMPATIBILITY_LIMIT: f64 = 1e-8;

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

fn remove_mean(x: &mut [f64]) {
    let m = mean(x);
    for v in x.iter_mut() {
        *v -= m;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solve `K x = b` for the mean-zero solution of a compatible singular
/// system.
pub fn solve_singular(
    k: &StiffnessMatrix,
    b: &[f64],
    opts: &SolveOptions,
) -> Result<(Vec<f64>, SingularSolveReport)> {
    let n = k.n();
    if b.len() != n {
        return Err(Error::Dimension(format!(
            "right-hand side has {} entries for a {n}-dimensional operator",
            b.len()
        )));
    }
    let norm1: f64 = b.iter().map(|v| v.abs()).sum();
    if norm1 == 0.0 {
        return Ok((
            vec![0.0; n],
            SingularSolveReport {
                iterations: 0,
                relative_residual: 0.0,
                compatibility_defect: 0.0,
            },
        ));
    }
    let defect = b.iter().sum::<f64>().abs() / norm1;
    if defect > COMPATIBILITY_LIMIT {
        return Err(Error::IncompatibleRhs {
            defect,
            limit: COMPATIBILITY_LIMIT,
        });
    }

    // project the data onto the compatible subspace
    let mut rhs = b.to_vec();
    remove_mean(&mut rhs);
    let bnorm = dot(&rhs, &rhs).sqrt();
    if bnorm == 0.0 {
        return Ok((
            vec![0.0; n],
            SingularSolveReport {
                iterations: 0,
                relative_residual: 0.0,
                compatibility_defect: defect,
            },
        ));
    }

    let diag = k.matrix.diagonal();
    if diag.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Assembly("stiffness diagonal is not positive".into()));
    }

    let max_iter = opts.max_iterations.unwrap_or(10 * n);
    let mut x = vec![0.0; n];
    let mut r = rhs;
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
    remove_mean(&mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    let mut rnorm = dot(&r, &r).sqrt();

    while rnorm > opts.tolerance * bnorm {
        if iterations >= max_iter {
            return Err(Error::NonConvergence {
                iterations,
                residual: rnorm / bnorm,
                tolerance: opts.tolerance,
            });
        }
        k.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NonConvergence {
                iterations,
                residual: rnorm / bnorm,
                tolerance: opts.tolerance,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        remove_mean(&mut x);
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        remove_mean(&mut z);
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        iterations += 1;
        rnorm = dot(&r, &r).sqrt();
    }

    remove_mean(&mut x);
    Ok((
        x,
        SingularSolveReport {
            iterations,
            relative_residual: rnorm / bnorm,
            compatibility_defect: defect,
        },
    ))
}

/// Plain preconditioned conjugate gradients for a definite system.
pub fn solve_spd(a: &SparseMatrix, b: &[f64], opts: &SolveOptions) -> Result<(Vec<f64>, usize)> {
    let n = a.n;
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return Ok((vec![0.0; n], 0));
    }
    let diag = a.diagonal();
    if diag.iter().any(|&d| !(d > 0.0)) {
        return Err(Error::Assembly("matrix diagonal is not positive".into()));
    }
    let max_iter = opts.max_iterations.unwrap_or(10 * n);
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(ri, di)| ri / di).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut ap = vec![0.0; n];
    let mut iterations = 0;
    loop {
        let rnorm = dot(&r, &r).sqrt();
        if rnorm <= opts.tolerance * bnorm {
            return Ok((x, iterations));
        }
        if iterations >= max_iter {
            return Err(Error::NonConvergence {
                iterations,
                residual: rnorm / bnorm,
                tolerance: opts.tolerance,
            });
        }
        a.matvec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NonConvergence {
                iterations,
                residual: rnorm / bnorm,
                tolerance: opts.tolerance,
            });
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        for i in 0..n {
            z[i] = r[i] / diag[i];
        }
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
        iterations += 1;
    }
}

// ---------------------------------------------------------------------------
// Dense pseudo-inverse (small-mesh oracle path)
// ---------------------------------------------------------------------------

/// Size guard for dense factorizations.
pub const DENSE_LIMIT: usize = 2000;

/// Relative eigenvalue cutoff separating the constant kernel from the rest.
const KERNEL_CUTOFF: f64 = 1e-10;

/// Pseudo-inverse of the singular stiffness matrix as a dense matrix
/// (mean-zero range). Guarded to small systems.
pub fn dense_pseudo_inverse(k: &StiffnessMatrix) -> Result<DMatrix<f64>> {
    let n = k.n();
    if n > DENSE_LIMIT {
        return Err(Error::Dimension(format!(
            "dense pseudo-inverse limited to {DENSE_LIMIT} unknowns, mesh has {n}"
        )));
    }
    let dense = k.matrix.to_dense();
    let sym = (dense.clone() + dense.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let lmax = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    let mut pinv = DMatrix::zeros(n, n);
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda > KERNEL_CUTOFF * lmax {
            let q = eig.eigenvectors.column(i);
            pinv += q * q.transpose() / lambda;
        }
    }
    Ok(pinv)
}

/// Mean-zero solution of the singular system via the dense pseudo-inverse.
pub fn dense_pseudo_solve(k: &StiffnessMatrix, b: &[f64]) -> Result<Vec<f64>> {
    let pinv = dense_pseudo_inverse(k)?;
    let mut x: Vec<f64> = (&pinv * DVector::from_column_slice(b)).iter().copied().collect();
    remove_mean(&mut x);
    Ok(x)
}

// ---------------------------------------------------------------------------
// Banded direct solver
// ---------------------------------------------------------------------------

/// Reverse Cuthill-McKee ordering of a symmetric sparsity pattern.
pub fn rcm_ordering(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let degree: Vec<usize> = adjacency.iter().map(|a| a.len()).collect();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    loop {
        // lowest-degree unvisited vertex seeds the next component
        let seed = match (0..n).filter(|&v| !visited[v]).min_by_key(|&v| degree[v]) {
            Some(s) => s,
            None => break,
        };
        visited[seed] = true;
        let mut queue = std::collections::VecDeque::from([seed]);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adjacency[v]
                .iter()
                .copied()
                .filter(|&u| !visited[u])
                .collect();
            next.sort_unstable_by_key(|&u| (degree[u], u));
            for u in next {
                visited[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// Variable-band (skyline) LDL^T factorization of a symmetric positive
/// definite matrix under a bandwidth-reducing permutation.
pub struct BandedCholesky {
    perm: Vec<usize>,
    /// first stored column of each permuted row
    first: Vec<usize>,
    /// row storage: entries `first[i]..=i`
    rows: Vec<Vec<f64>>,
    diag: Vec<f64>,
}

impl BandedCholesky {
    /// Factor `a` (symmetric positive definite).
    pub fn factor(a: &SparseMatrix) -> Result<Self> {
        let n = a.n;
        let perm = rcm_ordering(&a.adjacency());
        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }

        // skyline profile of the permuted matrix
        let mut first: Vec<usize> = (0..n).collect();
        for r in 0..n {
            for k in a.row_ptr[r]..a.row_ptr[r + 1] {
                let (i, j) = (inv[r], inv[a.col_idx[k]]);
                let (lo, hi) = (i.min(j), i.max(j));
                first[hi] = first[hi].min(lo);
            }
        }
        let profile: usize = (0..n).map(|i| i - first[i] + 1).sum();
        if profile > 300_000_000 {
            return Err(Error::Dimension(format!(
                "banded factorization profile too large ({profile} entries)"
            )));
        }

        let mut rows: Vec<Vec<f64>> = (0..n).map(|i| vec![0.0; i - first[i] + 1]).collect();
        for r in 0..n {
            for k in a.row_ptr[r]..a.row_ptr[r + 1] {
                let (i, j) = (inv[r], inv[a.col_idx[k]]);
                if j <= i {
                    rows[i][j - first[i]] += a.values[k];
                    if i != j && j < first[i] {
                        unreachable!();
                    }
                }
            }
        }

        // in-place LDL^T: rows[i][j] becomes L(i, j), diag holds D
        let mut diag = vec![0.0; n];
        for i in 0..n {
            let fi = first[i];
            for j in fi..i {
                // L(i, j) = (A(i, j) - sum_k L(i, k) D(k) L(j, k)) / D(j)
                let fj = first[j];
                let lo = fi.max(fj);
                let mut sum = rows[i][j - fi];
                for k in lo..j {
                    sum -= rows[i][k - fi] * diag[k] * rows[j][k - fj];
                }
                rows[i][j - fi] = sum / diag[j];
            }
            let mut d = rows[i][i - fi];
            for k in fi..i {
                let l = rows[i][k - fi];
                d -= l * l * diag[k];
            }
            if !(d > 0.0) {
                return Err(Error::Assembly(format!(
                    "banded factorization hit a non-positive pivot at row {i}"
                )));
            }
            diag[i] = d;
            rows[i][i - fi] = 1.0;
        }

        Ok(BandedCholesky {
            perm,
            first,
            rows,
            diag,
        })
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.perm.len();
        let mut y = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            y[new] = b[old];
        }
        // forward substitution L y' = y
        for i in 0..n {
            let fi = self.first[i];
            let mut sum = y[i];
            for k in fi..i {
                sum -= self.rows[i][k - fi] * y[k];
            }
            y[i] = sum;
        }
        for i in 0..n {
            y[i] /= self.diag[i];
        }
        // backward substitution L^T x = y'
        for i in (0..n).rev() {
            let fi = self.first[i];
            let xi = y[i];
            for k in fi..i {
                y[k] -= self.rows[i][k - fi] * xi;
            }
        }
        let mut x = vec![0.0; n];
        for (new, &old) in self.perm.iter().enumerate() {
            x[old] = y[new];
        }
        x
    }
}
