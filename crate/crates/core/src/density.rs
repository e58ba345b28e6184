//! Electrode position densities on the chest boundary curve.
//!
//! A density is stored as nodal values at the boundary loop vertices and
//! interpreted piecewise-linearly along arclength. Three kinds are
//! supported:
//!
//! * uniform on a geodesic ball, obtained by L2-projecting the
//!   characteristic function onto the piecewise-linear boundary space
//!   (negative projection overshoots are clamped and the result is
//!   renormalized);
//! * Gaussian-like, produced by diffusing a nodal delta with implicit
//!   Euler steps of the 1-D heat equation on the boundary polyline until
//!   the arclength standard deviation reaches `r / sqrt(3)`, which matches
//!   the variance of the uniform density with the same radius;
//! * degenerate (Dirac), stored as point masses on the two endpoints of
//!   the containing segment.
//!
//! All integrals use the same boundary quadrature as the assembly module,
//! so unit mass holds to rounding in every context that consumes a
//! density.

use crate::error::{Error, Result};
use crate::mesh::{BoundaryPoint, TriMesh};
use crate::quadrature::{pl_boundary_integral, GAUSS_2PT};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensityKind {
    Uniform { r: f64 },
    Gaussian { r: f64 },
    Dirac,
}

impl DensityKind {
    pub fn label(&self) -> &'static str {
        match self {
            DensityKind::Uniform { .. } => "uniform",
            DensityKind::Gaussian { .. } => "gaussian",
            DensityKind::Dirac => "dirac",
        }
    }
}

/// Marginal density of one electrode on the boundary curve.
///
/// For the non-degenerate kinds `nodal` holds piecewise-linear density
/// values (1/cm) at the boundary loop vertices. For the Dirac kind `nodal`
/// holds the barycentric point masses of the electrode position instead.
#[derive(Debug, Clone)]
pub struct DensityField {
    pub kind: DensityKind,
    pub center: BoundaryPoint,
    pub nodal: Vec<f64>,
}

impl DensityField {
    pub fn is_degenerate(&self) -> bool {
        matches!(self.kind, DensityKind::Dirac)
    }

    /// Total mass under the quadrature used everywhere else; 1 after
    /// construction.
    pub fn integral(&self, mesh: &TriMesh) -> f64 {
        match self.kind {
            DensityKind::Dirac => self.nodal.iter().sum(),
            _ => pl_boundary_integral(mesh, &self.nodal),
        }
    }

    /// Mean signed arclength offset from the center.
    pub fn arclength_mean(&self, mesh: &TriMesh) -> f64 {
        self.moment(mesh, 1)
    }

    /// Central variance of the arclength coordinate (cm^2).
    pub fn arclength_variance(&self, mesh: &TriMesh) -> f64 {
        let mu = self.moment(mesh, 1);
        self.moment(mesh, 2) - mu * mu
    }

    /// Raw moment of the signed arclength offset about the center.
    fn moment(&self, mesh: &TriMesh, power: i32) -> f64 {
        let b = &mesh.boundary;
        let c = self.center.arclength;
        match self.kind {
            DensityKind::Dirac => {
                let n = b.n();
                let mut m = 0.0;
                for (i, &w) in self.nodal.iter().enumerate() {
                    if w != 0.0 {
                        let _ = n;
                        let d = b.signed_offset(b.arclength[i], c);
                        m += w * d.powi(power);
                    }
                }
                m
            }
            _ => {
                let n = b.n();
                let mut m = 0.0;
                for i in 0..n {
                    let h = b.segment_length(i);
                    let j = (i + 1) % n;
                    let (ra, rb) = (self.nodal[i], self.nodal[j]);
                    let s0 = b.arclength[i];
                    for &(x, w) in &GAUSS_2PT {
                        let rho = ra + (rb - ra) * x;
                        let d = b.signed_offset(s0 + x * h, c);
                        m += h * w * rho * d.powi(power);
                    }
                }
                m
            }
        }
    }

    /// Draw a boundary point by inverting the piecewise-linear CDF along
    /// arclength. Degenerate densities return the center deterministically.
    pub fn sample<R: Rng + ?Sized>(&self, mesh: &TriMesh, rng: &mut R) -> BoundaryPoint {
        if self.is_degenerate() {
            return self.center;
        }
        let b = &mesh.boundary;
        let n = b.n();
        // cumulative per-segment masses
        let mut cum = Vec::with_capacity(n + 1);
        cum.push(0.0);
        for i in 0..n {
            let h = b.segment_length(i);
            let (ra, rb) = (self.nodal[i], self.nodal[(i + 1) % n]);
            cum.push(cum[i] + h * 0.5 * (ra + rb));
        }
        let total = cum[n];
        let u: f64 = rng.random::<f64>() * total;
        let seg = match cum.binary_search_by(|c| c.partial_cmp(&u).unwrap()) {
            Ok(i) => i.min(n - 1),
            Err(i) => i - 1,
        };
        let h = b.segment_length(seg);
        let (ra, rb) = (self.nodal[seg], self.nodal[(seg + 1) % n]);
        let m = u - cum[seg];
        // solve h * (ra t + (rb - ra) t^2 / 2) = m for t in [0, 1]
        let t = solve_segment_cdf(ra, rb, h, m);
        mesh.boundary_point_at(b.arclength[seg] + t * h)
    }
}

/// Invert the within-segment quadratic mass function.
fn solve_segment_cdf(ra: f64, rb: f64, h: f64, m: f64) -> f64 {
    let m = (m / h).clamp(0.0, 0.5 * (ra + rb));
    let a = 0.5 * (rb - ra);
    let t = if a.abs() < 1e-14 * (ra.abs() + rb.abs() + 1e-300) {
        if ra > 0.0 {
            m / ra
        } else {
            0.5
        }
    } else {
        // a t^2 + ra t - m = 0, take the root in [0, 1]
        let disc = (ra * ra + 4.0 * a * m).max(0.0);
        if a > 0.0 {
            (-ra + disc.sqrt()) / (2.0 * a)
        } else {
            // numerically stable branch for a < 0
            2.0 * m / (ra + disc.sqrt())
        }
    };
    t.clamp(0.0, 1.0)
}

/// Uniform density of geodesic radius `r` centered at a boundary point.
///
/// Nodal values are the exact overlap of the support with each node's dual
/// cell (half of each adjacent segment). Projecting the sharp edges onto
/// the piecewise-linear space necessarily widens the second moment, so the
/// support radius of the overlap is calibrated until the quadrature
/// variance equals the analytic `r^2 / 3`, the same contract the
/// Gaussian-like density satisfies. On boundaries too coarse to reach that
/// variance at all, the uncalibrated radius is kept.
pub fn uniform_density(mesh: &TriMesh, center: &BoundaryPoint, r: f64) -> Result<DensityField> {
    let b = &mesh.boundary;
    if r <= 0.0 {
        return Err(Error::Density(format!("uniform radius must be positive, got {r}")));
    }
    if 2.0 * r >= b.total_length {
        return Err(Error::Density(format!(
            "support 2r = {} does not fit on the boundary of length {}",
            2.0 * r,
            b.total_length
        )));
    }
    let n = b.n();
    let c = center.arclength;
    let total = b.total_length;

    // exact overlap of the support with each node's dual cell
    let dual_cell = |radius: f64| -> Vec<f64> {
        (0..n)
            .map(|i| {
                let h_prev = b.segment_length((i + n - 1) % n);
                let h_next = b.segment_length(i);
                let s = b.arclength[i];
                let (cell_lo, cell_hi) = (s - 0.5 * h_prev, s + 0.5 * h_next);
                let mut acc = 0.0;
                for k in [-1.0, 0.0, 1.0] {
                    let lo = (c - radius + k * total).max(cell_lo);
                    let hi = (c + radius + k * total).min(cell_hi);
                    if hi > lo {
                        acc += hi - lo;
                    }
                }
                acc / (cell_hi - cell_lo) / (2.0 * radius)
            })
            .collect()
    };
    let field_of = |nodal: Vec<f64>| DensityField {
        kind: DensityKind::Uniform { r },
        center: *center,
        nodal,
    };
    let variance_of = |radius: f64| field_of(dual_cell(radius)).arclength_variance(mesh);

    let target = r * r / 3.0;
    let mut radius = r;
    let (mut lo, mut hi) = (1e-3 * r, r);
    if variance_of(lo) < target && variance_of(hi) > target {
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if variance_of(mid) >= target {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        radius = 0.5 * (lo + hi);
    }

    let mut nodal = dual_cell(radius);
    renormalize(mesh, &mut nodal)?;
    Ok(field_of(nodal))
}

/// Gaussian-like density produced by diffusing a delta at the center until
/// the arclength standard deviation equals `r / sqrt(3)`.
pub fn gaussian_density(mesh: &TriMesh, center: &BoundaryPoint, r: f64) -> Result<DensityField> {
    let b = &mesh.boundary;
    if r <= 0.0 {
        return Err(Error::Density(format!("gaussian radius must be positive, got {r}")));
    }
    if 2.0 * r >= b.total_length {
        return Err(Error::Density(format!(
            "spread 2r = {} does not fit on the boundary of length {}",
            2.0 * r,
            b.total_length
        )));
    }
    let n = b.n();
    let target_std = r / 3.0f64.sqrt();
    let target_var = target_std * target_std;

    // lumped node masses and the weighted graph Laplacian of the loop
    let mut lumped = vec![0.0f64; n];
    for i in 0..n {
        let h = b.segment_length(i);
        lumped[i] += 0.5 * h;
        lumped[(i + 1) % n] += 0.5 * h;
    }
    let mut laplacian = DMatrix::zeros(n, n);
    for i in 0..n {
        let j = (i + 1) % n;
        let w = 1.0 / b.segment_length(i);
        laplacian[(i, i)] += w;
        laplacian[(j, j)] += w;
        laplacian[(i, j)] -= w;
        laplacian[(j, i)] -= w;
    }

    // delta at the center as a lumped-mass nodal field of unit integral
    let mut u = vec![0.0f64; n];
    let seg = center.segment;
    let t = center.local;
    u[seg] += (1.0 - t) / lumped[seg];
    u[(seg + 1) % n] += t / lumped[(seg + 1) % n];

    let field_of = |u: &[f64]| DensityField {
        kind: DensityKind::Gaussian { r },
        center: *center,
        nodal: u.to_vec(),
    };
    let variance_of = |u: &[f64]| field_of(u).arclength_variance(mesh);

    let step = |u: &[f64], dt: f64| -> Result<Vec<f64>> {
        let mut a = laplacian.clone() * dt;
        for i in 0..n {
            a[(i, i)] += lumped[i];
        }
        let rhs = DVector::from_iterator(n, u.iter().zip(&lumped).map(|(&v, &m)| v * m));
        let sol = a
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Density("heat step matrix is singular".into()))?;
        Ok(sol.iter().copied().collect())
    };

    // The variance of the heat kernel grows like 2t; aim for ~40 full
    // steps so the crossing step is small, then bisect the last step.
    let v0 = variance_of(&u);
    if v0 >= target_var {
        return Err(Error::Density(
            "boundary resolution too coarse for the requested gaussian spread".into(),
        ));
    }
    let dt = (target_var - v0) / 2.0 / 40.0;
    let mut prev = u.clone();
    let mut crossed = false;
    for _ in 0..100_000 {
        let next = step(&prev, dt)?;
        if variance_of(&next) >= target_var {
            // bisect the final step length
            let (mut lo, mut hi) = (0.0f64, dt);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                let trial = step(&prev, mid)?;
                if variance_of(&trial) >= target_var {
                    hi = mid;
                } else {
                    lo = mid;
                }
                if (hi - lo) < 1e-12 * dt {
                    break;
                }
            }
            prev = step(&prev, hi)?;
            crossed = true;
            break;
        }
        prev = next;
    }
    if !crossed {
        return Err(Error::Density(
            "heat diffusion did not reach the target spread".into(),
        ));
    }

    let mut nodal: Vec<f64> = prev.iter().map(|&v| v.max(0.0)).collect();
    renormalize(mesh, &mut nodal)?;
    Ok(DensityField {
        kind: DensityKind::Gaussian { r },
        center: *center,
        nodal,
    })
}

/// Degenerate density: barycentric point masses of the center on its
/// containing segment.
pub fn dirac_density(mesh: &TriMesh, center: &BoundaryPoint) -> DensityField {
    let n = mesh.boundary.n();
    let mut nodal = vec![0.0; n];
    nodal[center.segment] += 1.0 - center.local;
    nodal[(center.segment + 1) % n] += center.local;
    DensityField {
        kind: DensityKind::Dirac,
        center: *center,
        nodal,
    }
}

fn renormalize(mesh: &TriMesh, nodal: &mut [f64]) -> Result<()> {
    let total = pl_boundary_integral(mesh, nodal);
    if !(total > 0.0) {
        return Err(Error::Density("density has no mass after projection".into()));
    }
    for v in nodal.iter_mut() {
        *v /= total;
    }
    Ok(())
}

/// Joint electrode position model: one marginal per electrode plus the
/// pairwise structure.
#[derive(Debug, Clone)]
pub struct JointDensityModel {
    pub electrodes: Vec<DensityField>,
    pub pairwise: PairwiseMarginals,
}

#[derive(Debug, Clone)]
pub enum PairwiseMarginals {
    /// Electrode positions are mutually independent; pairwise marginals
    /// factorize into products of the single marginals.
    Independent,
    /// Explicit pairwise marginals as boundary-node matrices, keyed by
    /// ordered electrode index pairs `(l, l')` with `l != l'`.
    Explicit(std::collections::HashMap<(usize, usize), DMatrix<f64>>),
}

impl JointDensityModel {
    pub fn independent(electrodes: Vec<DensityField>) -> Self {
        JointDensityModel {
            electrodes,
            pairwise: PairwiseMarginals::Independent,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_idealized_geometry, electrode_anchor, GeometryParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn test_mesh() -> TriMesh {
        let params = GeometryParams::default().scaled_edges(8.0);
        build_idealized_geometry(&params).unwrap().0
    }

    /// Benchmark-resolution boundary (0.5 cm segments) on a coarse interior.
    fn fine_boundary_mesh() -> TriMesh {
        let mut params = GeometryParams::default().scaled_edges(8.0);
        params.torso_edge = 0.5;
        params.heart_edge = 0.16;
        build_idealized_geometry(&params).unwrap().0
    }

    #[test]
    fn uniform_density_mass_support_and_height() {
        let mesh = fine_boundary_mesh();
        let anchor = electrode_anchor(&mesh, 1.5 * std::f64::consts::PI);
        let rho = uniform_density(&mesh, &anchor, 1.5).unwrap();
        assert!((rho.integral(&mesh) - 1.0).abs() < 1e-12);
        // height ~ 1/(2r) = 1/3 at the center
        let at_center = mesh.interpolate_on_boundary(&rho.nodal, &anchor);
        assert!(
            (at_center - 1.0 / 3.0).abs() < 0.10 / 3.0,
            "center height {at_center}"
        );
        // support extent ~ 3 cm (allow the projection to smear by ~2 edges)
        let b = &mesh.boundary;
        let max_edge = (0..b.n()).map(|i| b.segment_length(i)).fold(0.0, f64::max);
        let support: Vec<f64> = (0..b.n())
            .filter(|&i| rho.nodal[i] > 0.01 / 3.0)
            .map(|i| b.signed_offset(b.arclength[i], anchor.arclength).abs())
            .collect();
        let extent = 2.0 * support.iter().copied().fold(0.0, f64::max);
        assert!((extent - 3.0).abs() < 2.0 * max_edge, "support extent {extent}");
        for i in 0..b.n() {
            if b.geodesic_distance(b.arclength[i], anchor.arclength) > 1.5 + 2.0 * max_edge {
                assert_eq!(rho.nodal[i], 0.0, "support leaked to node {i}");
            }
        }
    }

    #[test]
    fn uniform_density_variance_matches_analytic() {
        let mesh = fine_boundary_mesh();
        for theta in [0.3, 1.0, 1.5 * std::f64::consts::PI, std::f64::consts::PI] {
            let anchor = electrode_anchor(&mesh, theta);
            let rho = uniform_density(&mesh, &anchor, 1.5).unwrap();
            let var = rho.arclength_variance(&mesh);
            let exact = 1.5f64.powi(2) / 3.0;
            assert!(
                (var - exact).abs() < 0.02 * exact,
                "variance {var} vs {exact} at theta {theta}"
            );
        }
    }

    #[test]
    fn uniform_density_is_nonnegative_and_rejects_bad_radius() {
        let mesh = test_mesh();
        let anchor = electrode_anchor(&mesh, 0.5);
        let rho = uniform_density(&mesh, &anchor, 1.5).unwrap();
        assert!(rho.nodal.iter().all(|&v| v >= 0.0));
        assert!(uniform_density(&mesh, &anchor, 0.0).is_err());
        assert!(uniform_density(&mesh, &anchor, mesh.boundary.total_length).is_err());
    }

    #[test]
    fn gaussian_density_std_and_mode() {
        let mesh = fine_boundary_mesh();
        let anchor = electrode_anchor(&mesh, std::f64::consts::PI);
        let rho = gaussian_density(&mesh, &anchor, 1.5).unwrap();
        assert!((rho.integral(&mesh) - 1.0).abs() < 1e-12);
        let std = rho.arclength_variance(&mesh).sqrt();
        let target = 1.5 / 3.0f64.sqrt();
        assert!((std - target).abs() < 0.02 * target, "std {std} vs {target}");
        assert!(rho.nodal.iter().all(|&v| v >= 0.0));
        // mode within one boundary edge of the center
        let b = &mesh.boundary;
        let mode = (0..b.n())
            .max_by(|&i, &j| rho.nodal[i].partial_cmp(&rho.nodal[j]).unwrap())
            .unwrap();
        let dist = b.geodesic_distance(b.arclength[mode], anchor.arclength);
        let max_edge = (0..b.n()).map(|i| b.segment_length(i)).fold(0.0, f64::max);
        assert!(dist <= max_edge, "mode is {dist} cm from the center");
    }

    #[test]
    fn uniform_and_gaussian_variances_agree() {
        let mesh = fine_boundary_mesh();
        let anchor = electrode_anchor(&mesh, 0.75 * std::f64::consts::PI);
        let u = uniform_density(&mesh, &anchor, 1.5).unwrap();
        let g = gaussian_density(&mesh, &anchor, 1.5).unwrap();
        let (vu, vg) = (u.arclength_variance(&mesh), g.arclength_variance(&mesh));
        assert!((vu - vg).abs() < 0.02 * vg, "uniform {vu} vs gaussian {vg}");
    }

    #[test]
    fn dirac_density_weights() {
        let mesh = test_mesh();
        // exactly at a boundary vertex
        let v0 = mesh.boundary_vertex_position(3);
        let at_vertex = mesh.project_to_boundary(v0);
        let d = dirac_density(&mesh, &at_vertex);
        let nonzero: Vec<(usize, f64)> = d
            .nodal
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(i, &w)| (i, w))
            .collect();
        assert_eq!(nonzero, vec![(3, 1.0)]);

        // at a segment midpoint
        let s = mesh.boundary.arclength[5] + 0.5 * mesh.boundary.segment_length(5);
        let mid = mesh.boundary_point_at(s);
        let d = dirac_density(&mesh, &mid);
        assert!((d.nodal[5] - 0.5).abs() < 1e-12);
        assert!((d.nodal[6] - 0.5).abs() < 1e-12);
        assert!((d.integral(&mesh) - 1.0).abs() < 1e-12);
        // variance limited to the two-node smear of the representation
        let h = mesh.boundary.segment_length(5);
        assert!(d.arclength_variance(&mesh) <= 0.25 * h * h + 1e-12);

        let at_vertex_var = dirac_density(&mesh, &at_vertex).arclength_variance(&mesh);
        assert!(at_vertex_var.abs() < 1e-12);
    }

    #[test]
    fn sampling_mean_and_variance_are_consistent() {
        let mesh = fine_boundary_mesh();
        let anchor = electrode_anchor(&mesh, 1.5 * std::f64::consts::PI);
        let rho = uniform_density(&mesh, &anchor, 1.5).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(42);
        let n = 100_000;
        let offsets: Vec<f64> = (0..n)
            .map(|_| {
                let p = rho.sample(&mesh, &mut rng);
                mesh.boundary.signed_offset(p.arclength, anchor.arclength)
            })
            .collect();
        let mean = offsets.iter().sum::<f64>() / n as f64;
        let var = offsets.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n as f64 - 1.0);

        // mean within 3 standard errors of the field's own mean
        let field_mean = rho.arclength_mean(&mesh);
        let se_mean = (var / n as f64).sqrt();
        assert!(
            (mean - field_mean).abs() <= 3.0 * se_mean,
            "mean {mean} vs {field_mean} (se {se_mean})"
        );

        // empirical variance within 3 bootstrap standard errors of the
        // field's quadrature variance (which itself is r^2/3 within 2%)
        let field_var = rho.arclength_variance(&mesh);
        let mut boot_rng = ChaCha12Rng::seed_from_u64(7);
        let b = 200;
        let mut boot = Vec::with_capacity(b);
        for _ in 0..b {
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for _ in 0..n {
                let d = offsets[boot_rng.random_range(0..n)];
                s1 += d;
                s2 += d * d;
            }
            let m = s1 / n as f64;
            boot.push((s2 / n as f64 - m * m) * n as f64 / (n as f64 - 1.0));
        }
        let boot_mean = boot.iter().sum::<f64>() / b as f64;
        let boot_se = (boot.iter().map(|v| (v - boot_mean) * (v - boot_mean)).sum::<f64>()
            / (b as f64 - 1.0))
            .sqrt();
        assert!(
            (var - field_var).abs() <= 3.0 * boot_se,
            "variance {var} vs {field_var} (bootstrap se {boot_se})"
        );
        let exact = 1.5f64.powi(2) / 3.0;
        assert!((field_var - exact).abs() < 0.02 * exact);
    }

    #[test]
    fn sampling_is_deterministic_and_degenerate_returns_center() {
        let mesh = test_mesh();
        let anchor = electrode_anchor(&mesh, 1.0);
        let rho = uniform_density(&mesh, &anchor, 1.5).unwrap();
        let draw = |seed: u64| -> Vec<f64> {
            let mut rng = ChaCha12Rng::seed_from_u64(seed);
            (0..64).map(|_| rho.sample(&mesh, &mut rng).arclength).collect()
        };
        assert_eq!(draw(9), draw(9));

        let dirac = dirac_density(&mesh, &anchor);
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let p = dirac.sample(&mesh, &mut rng);
        assert_eq!(p.arclength, anchor.arclength);
    }

    #[test]
    fn sampling_passes_ks_against_the_field_cdf() {
        let mesh = fine_boundary_mesh();
        let anchor = electrode_anchor(&mesh, 0.2);
        let rho = uniform_density(&mesh, &anchor, 1.5).unwrap();
        let b = &mesh.boundary;
        let n_nodes = b.n();

        // independent fine-grained CDF of the piecewise-linear density,
        // evaluated by dense trapezoid sums per segment
        let cdf_at = |s: f64| -> f64 {
            let mut acc = 0.0;
            let fine = 64;
            'outer: for i in 0..n_nodes {
                let h = b.segment_length(i);
                let (ra, rb) = (rho.nodal[i], rho.nodal[(i + 1) % n_nodes]);
                for k in 0..fine {
                    let x0 = k as f64 / fine as f64;
                    let x1 = (k + 1) as f64 / fine as f64;
                    let s1 = b.arclength[i] + x1 * h;
                    let piece = h / fine as f64 * 0.5
                        * ((ra + (rb - ra) * x0) + (ra + (rb - ra) * x1));
                    if s1 > s {
                        // partial bin
                        let s0 = b.arclength[i] + x0 * h;
                        if s > s0 {
                            acc += piece * (s - s0) / (s1 - s0);
                        }
                        break 'outer;
                    }
                    acc += piece;
                }
            }
            acc
        };

        let n = 10_000usize;
        let mut rng = ChaCha12Rng::seed_from_u64(1234);
        let mut samples: Vec<f64> = (0..n).map(|_| rho.sample(&mesh, &mut rng).arclength).collect();
        samples.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut dmax: f64 = 0.0;
        for (i, &s) in samples.iter().enumerate() {
            let f = cdf_at(s);
            let lo = i as f64 / n as f64;
            let hi = (i + 1) as f64 / n as f64;
            dmax = dmax.max((f - lo).abs()).max((f - hi).abs());
        }
        // 1% critical value of the one-sample KS statistic
        let crit = 1.628 / (n as f64).sqrt();
        assert!(dmax < crit, "KS statistic {dmax} exceeds {crit}");
    }
}
