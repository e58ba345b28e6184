//! Diagonally pivoted, truncated Cholesky factorization of the boundary
//! correlation matrix.
//!
//! Greedy selection of the largest residual diagonal yields
//! `R ~ sum_k r_k r_k^T` with the residual trace below a relative
//! tolerance. Factors stay on boundary indexing; callers scatter them to
//! full nodal vectors when solving.

use crate::assembly::CorrelationMatrix;
use crate::error::{Error, Result};

/// Result of the truncated factorization.
#[derive(Debug, Clone)]
pub struct LowRankFactors {
    /// Boundary-indexed factors, in pivot order.
    pub factors: Vec<Vec<f64>>,
    pub tolerance: f64,
    /// Residual trace `trace(R) - sum_k ||r_k||^2`.
    pub residual_trace: f64,
    /// Pivot indices in selection order.
    pub pivots: Vec<usize>,
}

impl LowRankFactors {
    pub fn rank(&self) -> usize {
        self.factors.len()
    }
}

/// Factor `R` until the residual trace drops below `tol * trace(R)`.
///
/// Non-positive residual diagonal entries (roundoff) are clamped to zero
/// and never selected. Ties in pivot selection resolve to the lowest
/// index.
pub fn pivoted_cholesky(r: &CorrelationMatrix, tol: f64) -> Result<LowRankFactors> {
    let n = r.dim();
    let trace0 = r.trace();
    if !(trace0 > 0.0) {
        return Err(Error::LowRank(format!(
            "correlation matrix has non-positive trace {trace0}"
        )));
    }
    if !(tol >= 0.0) {
        return Err(Error::LowRank(format!("invalid tolerance {tol}")));
    }

    let mut diag: Vec<f64> = (0..n).map(|i| r.matrix[(i, i)]).collect();
    let mut factors: Vec<Vec<f64>> = Vec::new();
    let mut pivots: Vec<usize> = Vec::new();
    let mut residual = trace0;

    while residual > tol * trace0 && factors.len() < n {
        // largest residual diagonal, lowest index on ties
        let mut pivot = None;
        let mut best = 0.0f64;
        for (i, &d) in diag.iter().enumerate() {
            if d > best {
                best = d;
                pivot = Some(i);
            }
        }
        let Some(p) = pivot else {
            break; // all residual diagonals clamped to zero
        };

        let scale = 1.0 / best.sqrt();
        let mut col: Vec<f64> = (0..n).map(|i| r.matrix[(i, p)]).collect();
        for (f, &fp) in factors.iter().map(|f| (f, &f[p])) {
            for (ci, fi) in col.iter_mut().zip(f) {
                *ci -= fp * fi;
            }
        }
        for c in col.iter_mut() {
            *c *= scale;
        }
        for (d, &c) in diag.iter_mut().zip(&col) {
            *d = (*d - c * c).max(0.0);
        }
        diag[p] = 0.0;
        residual -= col.iter().map(|c| c * c).sum::<f64>();
        factors.push(col);
        pivots.push(p);
    }

    Ok(LowRankFactors {
        factors,
        tolerance: tol,
        residual_trace: residual,
        pivots,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn corr(m: DMatrix<f64>) -> CorrelationMatrix {
        CorrelationMatrix { matrix: m }
    }

    fn reconstruction(f: &LowRankFactors, n: usize) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(n, n);
        for col in &f.factors {
            let v = nalgebra::DVector::from_column_slice(col);
            m += &v * v.transpose();
        }
        m
    }

    #[test]
    fn rank_one_input_yields_one_factor() {
        let v = nalgebra::DVector::from_iterator(8, (0..8).map(|i| (i as f64 - 3.5) * 0.25));
        let r = corr(&v * v.transpose());
        let f = pivoted_cholesky(&r, 1e-12).unwrap();
        assert_eq!(f.rank(), 1);
        let vn2 = v.norm_squared();
        assert!(f.residual_trace.abs() <= 1e-12 * vn2);
        // factor is v up to sign
        let got = nalgebra::DVector::from_column_slice(&f.factors[0]);
        let diff = (got.clone() - &v).norm().min((got + &v).norm());
        assert!(diff <= 1e-10 * v.norm());
    }

    #[test]
    fn identity_yields_unit_basis_in_index_order() {
        let r = corr(DMatrix::identity(10, 10));
        let f = pivoted_cholesky(&r, 1e-12).unwrap();
        assert_eq!(f.rank(), 10);
        // ties break to the lowest index
        assert_eq!(f.pivots, (0..10).collect::<Vec<_>>());
        for (k, col) in f.factors.iter().enumerate() {
            for (i, &c) in col.iter().enumerate() {
                let expect = if i == k { 1.0 } else { 0.0 };
                assert!((c - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn reconstruction_error_and_pivot_interpolation() {
        // random-ish PSD matrix of moderate rank
        let n = 24;
        let b = DMatrix::from_fn(n, 6, |i, j| ((i * 7 + j * 13) % 17) as f64 / 17.0 - 0.4);
        let m = &b * b.transpose();
        let r = corr(m.clone());
        let tol = 1e-10;
        let f = pivoted_cholesky(&r, tol).unwrap();
        assert!(f.residual_trace <= tol * m.trace());
        assert!(f.residual_trace >= -1e-10 * m.trace());
        let rec = reconstruction(&f, n);
        // exact interpolation on pivoted rows and columns
        for &p in &f.pivots {
            for i in 0..n {
                assert!(
                    (rec[(i, p)] - m[(i, p)]).abs() <= 1e-8 * m.trace(),
                    "column {p} deviates at {i}"
                );
            }
        }
        let frob_err = (&rec - &m).norm();
        let bound = (tol * m.trace() * m.norm() * f.rank() as f64).sqrt();
        assert!(frob_err <= bound.max(1e-8), "Frobenius error {frob_err}");
    }

    #[test]
    fn tightening_the_tolerance_never_reduces_rank() {
        let n = 20;
        let b = DMatrix::from_fn(n, n, |i, j| {
            (-((i as f64 - j as f64) / 3.0).powi(2)).exp()
        });
        let m = &b * b.transpose();
        let mut last = 0;
        for tol in [1e-2, 1e-4, 1e-6, 1e-8, 1e-10] {
            let f = pivoted_cholesky(&corr(m.clone()), tol).unwrap();
            assert!(f.rank() >= last, "rank dropped at tol {tol}");
            last = f.rank();
        }
    }

    #[test]
    fn degenerate_trace_is_rejected() {
        let r = corr(DMatrix::zeros(4, 4));
        assert!(pivoted_cholesky(&r, 1e-10).is_err());
    }
}
