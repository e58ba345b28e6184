//! Triangulated 2-D torso sections: geometry generation, region tags,
//! fiber fields and the chest boundary curve.
//!
//! The idealized anatomy is an elliptical torso containing an annular heart
//! with a blood pool inside it. The heart annulus is meshed with a
//! structured polar grid at a fine target edge; blood pool and torso are
//! filled with graded unstructured point clouds triangulated by
//! [`delaunay::triangulate`]. All three parts share the exact vertices on
//! the endocardial and epicardial circles, so the assembled mesh is
//! conforming.
//!
//! The outer boundary polyline is extracted, oriented counterclockwise and
//! parametrized by cumulative arclength with its origin at the vertex of
//! largest x (the zero-angle point of the ellipse).

mod delaunay;
mod io;

pub use io::{load_mesh, save_mesh, write_vtk, VtkCellData, VtkPointData};

use crate::error::{Error, Result};
use std::collections::HashMap;

/// Tissue label of a triangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Region {
    Heart,
    Blood,
    Torso,
}

impl Region {
    pub fn as_str(&self) -> &'static str {
        match self {
            Region::Heart => "heart",
            Region::Blood => "blood",
            Region::Torso => "torso",
        }
    }

    pub fn parse(s: &str) -> Option<Region> {
        match s {
            "heart" => Some(Region::Heart),
            "blood" => Some(Region::Blood),
            "torso" => Some(Region::Torso),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Triangle {
    pub vertices: [usize; 3],
    pub region: Region,
}

/// Closed outer boundary polyline with arclength parametrization.
///
/// Segment `i` joins loop vertex `i` to loop vertex `(i + 1) % n`.
#[derive(Debug, Clone)]
pub struct Boundary {
    pub loop_vertices: Vec<usize>,
    /// Cumulative arclength at each loop vertex; `arclength[0] == 0`.
    pub arclength: Vec<f64>,
    pub total_length: f64,
}

impl Boundary {
    pub fn n(&self) -> usize {
        self.loop_vertices.len()
    }

    pub fn segment_length(&self, i: usize) -> f64 {
        let n = self.n();
        if i + 1 < n {
            self.arclength[i + 1] - self.arclength[i]
        } else {
            self.total_length - self.arclength[n - 1]
        }
    }

    /// Wrap an arclength coordinate into `[0, total_length)`.
    pub fn wrap(&self, s: f64) -> f64 {
        let l = self.total_length;
        let mut w = s % l;
        if w < 0.0 {
            w += l;
        }
        w
    }

    /// Geodesic distance between two arclength coordinates on the loop.
    pub fn geodesic_distance(&self, s1: f64, s2: f64) -> f64 {
        let d = (self.wrap(s1) - self.wrap(s2)).abs();
        d.min(self.total_length - d)
    }

    /// Signed offset of `s` relative to `from`, in `(-L/2, L/2]`.
    pub fn signed_offset(&self, s: f64, from: f64) -> f64 {
        let l = self.total_length;
        let mut d = self.wrap(s) - self.wrap(from);
        if d > 0.5 * l {
            d -= l;
        } else if d <= -0.5 * l {
            d += l;
        }
        d
    }
}

/// A point on the boundary polyline.
#[derive(Debug, Clone, Copy)]
pub struct BoundaryPoint {
    /// Index of the containing segment.
    pub segment: usize,
    /// Position within the segment, in `[0, 1]`.
    pub local: f64,
    /// Arclength coordinate.
    pub arclength: f64,
    pub position: [f64; 2],
}

/// Conforming triangulation with region tags and outer boundary.
#[derive(Debug, Clone)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<Triangle>,
    pub boundary: Boundary,
}

/// Unit fiber direction per heart triangle (`None` outside the heart).
#[derive(Debug, Clone)]
pub struct FiberField {
    per_triangle: Vec<Option<[f64; 2]>>,
}

impl FiberField {
    pub fn new(per_triangle: Vec<Option<[f64; 2]>>) -> Self {
        FiberField { per_triangle }
    }

    pub fn get(&self, triangle: usize) -> Option<[f64; 2]> {
        self.per_triangle.get(triangle).copied().flatten()
    }

    pub fn len(&self) -> usize {
        self.per_triangle.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_triangle.is_empty()
    }

    /// Fibers of heart triangles in global triangle order.
    pub fn heart_fibers(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.per_triangle.iter().filter_map(|f| *f)
    }

    pub fn validate(&self, mesh: &TriMesh) -> Result<()> {
        if self.per_triangle.len() != mesh.triangles.len() {
            return Err(Error::Dimension(format!(
                "fiber field covers {} triangles, mesh has {}",
                self.per_triangle.len(),
                mesh.triangles.len()
            )));
        }
        for (t, tri) in mesh.triangles.iter().enumerate() {
            match (tri.region, self.per_triangle[t]) {
                (Region::Heart, Some(f)) => {
                    let norm = (f[0] * f[0] + f[1] * f[1]).sqrt();
                    if (norm - 1.0).abs() > 1e-10 {
                        return Err(Error::Geometry(format!(
                            "fiber on triangle {t} has norm {norm}"
                        )));
                    }
                }
                (Region::Heart, None) => {
                    return Err(Error::Geometry(format!(
                        "heart triangle {t} is missing a fiber"
                    )))
                }
                (_, Some(_)) => {
                    return Err(Error::Geometry(format!(
                        "non-heart triangle {t} carries a fiber"
                    )))
                }
                (_, None) => {}
            }
        }
        Ok(())
    }
}

/// Parameters of the idealized torso-heart cross-section (all lengths cm).
#[derive(Debug, Clone, Copy)]
pub struct GeometryParams {
    pub torso_semi_axis_x: f64,
    pub torso_semi_axis_y: f64,
    pub heart_center: [f64; 2],
    pub endo_radius: f64,
    pub epi_radius: f64,
    /// Target median edge length inside the heart annulus.
    pub heart_edge: f64,
    /// Target edge length in the blood pool and torso.
    pub torso_edge: f64,
}

impl Default for GeometryParams {
    fn default() -> Self {
        GeometryParams {
            torso_semi_axis_x: 10.0,
            torso_semi_axis_y: 15.0,
            heart_center: [-4.0, 2.0],
            endo_radius: 2.0,
            epi_radius: 3.0,
            heart_edge: 0.04,
            torso_edge: 0.5,
        }
    }
}

impl GeometryParams {
    /// Same anatomy at a coarser resolution (edge targets scaled by `s`).
    pub fn scaled_edges(mut self, s: f64) -> Self {
        self.heart_edge *= s;
        self.torso_edge *= s;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.endo_radius > 0.0 && self.endo_radius < self.epi_radius) {
            return Err(Error::Geometry(format!(
                "need 0 < endo radius < epi radius, got {} and {}",
                self.endo_radius, self.epi_radius
            )));
        }
        if self.heart_edge <= 0.0 || self.torso_edge <= 0.0 {
            return Err(Error::Geometry("edge targets must be positive".into()));
        }
        if self.torso_semi_axis_x <= 0.0 || self.torso_semi_axis_y <= 0.0 {
            return Err(Error::Geometry("torso semi-axes must be positive".into()));
        }
        // The heart annulus must sit strictly inside the torso ellipse.
        let margin = 0.02 * self.epi_radius;
        for k in 0..256 {
            let phi = 2.0 * std::f64::consts::PI * k as f64 / 256.0;
            let p = [
                self.heart_center[0] + (self.epi_radius + margin) * phi.cos(),
                self.heart_center[1] + (self.epi_radius + margin) * phi.sin(),
            ];
            let e = (p[0] / self.torso_semi_axis_x).powi(2)
                + (p[1] / self.torso_semi_axis_y).powi(2);
            if e >= 1.0 {
                return Err(Error::Geometry(
                    "heart annulus does not lie strictly inside the torso ellipse".into(),
                ));
            }
        }
        Ok(())
    }
}

pub(crate) fn signed_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]))
}

impl TriMesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t].vertices;
        signed_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn triangle_barycenter(&self, t: usize) -> [f64; 2] {
        let [a, b, c] = self.triangles[t].vertices;
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        [
            (pa[0] + pb[0] + pc[0]) / 3.0,
            (pa[1] + pb[1] + pc[1]) / 3.0,
        ]
    }

    pub fn region_area(&self, region: Region) -> f64 {
        (0..self.n_triangles())
            .filter(|&t| self.triangles[t].region == region)
            .map(|t| self.triangle_area(t))
            .sum()
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.triangle_area(t)).sum()
    }

    /// Median edge length over triangles of the given region.
    pub fn median_edge(&self, region: Region) -> f64 {
        let mut lengths = Vec::new();
        for tri in self.triangles.iter().filter(|t| t.region == region) {
            for i in 0..3 {
                let a = self.vertices[tri.vertices[i]];
                let b = self.vertices[tri.vertices[(i + 1) % 3]];
                lengths.push(((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt());
            }
        }
        if lengths.is_empty() {
            return 0.0;
        }
        lengths.sort_by(|a, b| a.partial_cmp(b).unwrap());
        lengths[lengths.len() / 2]
    }

    pub fn boundary_vertex_position(&self, loop_idx: usize) -> [f64; 2] {
        self.vertices[self.boundary.loop_vertices[loop_idx]]
    }

    /// Endpoints (global vertex ids) of boundary segment `i`.
    pub fn boundary_segment(&self, i: usize) -> (usize, usize) {
        let n = self.boundary.n();
        (
            self.boundary.loop_vertices[i],
            self.boundary.loop_vertices[(i + 1) % n],
        )
    }

    /// The boundary point at a given arclength coordinate.
    pub fn boundary_point_at(&self, s: f64) -> BoundaryPoint {
        let s = self.boundary.wrap(s);
        let cum = &self.boundary.arclength;
        // last segment whose start arclength is <= s
        let segment = match cum.binary_search_by(|c| c.partial_cmp(&s).unwrap()) {
            Ok(i) => i,
            Err(i) => i - 1,
        };
        let len = self.boundary.segment_length(segment);
        let local = if len > 0.0 { (s - cum[segment]) / len } else { 0.0 };
        let local = local.clamp(0.0, 1.0);
        let (a, b) = self.boundary_segment(segment);
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        BoundaryPoint {
            segment,
            local,
            arclength: s,
            position: [
                pa[0] + local * (pb[0] - pa[0]),
                pa[1] + local * (pb[1] - pa[1]),
            ],
        }
    }

    /// Closest point on the boundary polyline to `p`.
    pub fn project_to_boundary(&self, p: [f64; 2]) -> BoundaryPoint {
        let n = self.boundary.n();
        let mut best = (f64::INFINITY, 0usize, 0.0f64);
        for i in 0..n {
            let (a, b) = self.boundary_segment(i);
            let (pa, pb) = (self.vertices[a], self.vertices[b]);
            let d = [pb[0] - pa[0], pb[1] - pa[1]];
            let len2 = d[0] * d[0] + d[1] * d[1];
            let t = if len2 > 0.0 {
                (((p[0] - pa[0]) * d[0] + (p[1] - pa[1]) * d[1]) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let q = [pa[0] + t * d[0], pa[1] + t * d[1]];
            let dist2 = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
            if dist2 < best.0 {
                best = (dist2, i, t);
            }
        }
        let (_, segment, local) = best;
        let s = self.boundary.arclength[segment] + local * self.boundary.segment_length(segment);
        let (a, b) = self.boundary_segment(segment);
        let (pa, pb) = (self.vertices[a], self.vertices[b]);
        BoundaryPoint {
            segment,
            local,
            arclength: self.boundary.wrap(s),
            position: [
                pa[0] + local * (pb[0] - pa[0]),
                pa[1] + local * (pb[1] - pa[1]),
            ],
        }
    }

    /// Interpolate a boundary-loop-indexed nodal field at a boundary point.
    pub fn interpolate_on_boundary(&self, loop_values: &[f64], p: &BoundaryPoint) -> f64 {
        let n = self.boundary.n();
        let a = loop_values[p.segment];
        let b = loop_values[(p.segment + 1) % n];
        a + p.local * (b - a)
    }

    /// Check the structural invariants; called by generators and loaders.
    pub fn validate(&self) -> Result<()> {
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in &tri.vertices {
                if v >= self.vertices.len() {
                    return Err(Error::Topology(format!(
                        "triangle {t} references missing vertex {v}"
                    )));
                }
            }
            if self.triangle_area(t) <= 0.0 {
                return Err(Error::Topology(format!(
                    "triangle {t} has non-positive area {}",
                    self.triangle_area(t)
                )));
            }
        }
        // boundary arclengths strictly increasing
        for i in 1..self.boundary.n() {
            if self.boundary.arclength[i] <= self.boundary.arclength[i - 1] {
                return Err(Error::Topology("boundary arclength is not increasing".into()));
            }
        }
        self.check_heart_connected()?;
        Ok(())
    }

    fn check_heart_connected(&self) -> Result<()> {
        let heart: Vec<usize> = (0..self.n_triangles())
            .filter(|&t| self.triangles[t].region == Region::Heart)
            .collect();
        if heart.is_empty() {
            return Ok(());
        }
        // adjacency through shared edges, restricted to heart triangles
        let mut edge_to_tri: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
        for &t in &heart {
            let v = self.triangles[t].vertices;
            for i in 0..3 {
                let (a, b) = (v[i], v[(i + 1) % 3]);
                edge_to_tri.entry((a.min(b), a.max(b))).or_default().push(t);
            }
        }
        let mut seen: HashMap<usize, ()> = HashMap::new();
        let mut stack = vec![heart[0]];
        seen.insert(heart[0], ());
        while let Some(t) = stack.pop() {
            let v = self.triangles[t].vertices;
            for i in 0..3 {
                let (a, b) = (v[i], v[(i + 1) % 3]);
                for &u in &edge_to_tri[&(a.min(b), a.max(b))] {
                    if !seen.contains_key(&u) {
                        seen.insert(u, ());
                        stack.push(u);
                    }
                }
            }
        }
        if seen.len() != heart.len() {
            return Err(Error::Topology(format!(
                "heart region is not edge-connected ({} of {} triangles reached)",
                seen.len(),
                heart.len()
            )));
        }
        Ok(())
    }
}

/// Extracted single-region mesh with a map back to parent vertex ids.
#[derive(Debug, Clone)]
pub struct SubMesh {
    pub vertices: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// Fiber per submesh triangle (kept from the parent fiber field).
    pub fibers: Vec<Option<[f64; 2]>>,
    /// Submesh vertex id -> parent vertex id.
    pub vertex_map: Vec<usize>,
    pub parent_vertices: usize,
}

impl SubMesh {
    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    /// Submesh vertex nearest to `p`.
    pub fn nearest_vertex(&self, p: [f64; 2]) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (i, v) in self.vertices.iter().enumerate() {
            let d = (v[0] - p[0]).powi(2) + (v[1] - p[1]).powi(2);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }

    /// Scatter a submesh nodal field into a parent-sized vector.
    pub fn scatter(&self, values: &[f64], fill: f64) -> Vec<f64> {
        let mut out = vec![fill; self.parent_vertices];
        for (i, &g) in self.vertex_map.iter().enumerate() {
            out[g] = values[i];
        }
        out
    }
}

/// Extract the conforming submesh of one region.
pub fn extract_region(mesh: &TriMesh, fibers: &FiberField, region: Region) -> SubMesh {
    let mut map: HashMap<usize, usize> = HashMap::new();
    let mut vertex_map = Vec::new();
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    let mut sub_fibers = Vec::new();
    for (t, tri) in mesh.triangles.iter().enumerate() {
        if tri.region != region {
            continue;
        }
        let mut local = [0usize; 3];
        for (k, &v) in tri.vertices.iter().enumerate() {
            let id = *map.entry(v).or_insert_with(|| {
                vertices.push(mesh.vertices[v]);
                vertex_map.push(v);
                vertices.len() - 1
            });
            local[k] = id;
        }
        triangles.push(local);
        sub_fibers.push(fibers.get(t));
    }
    SubMesh {
        vertices,
        triangles,
        fibers: sub_fibers,
        vertex_map,
        parent_vertices: mesh.n_vertices(),
    }
}

// ---------------------------------------------------------------------------
// Geometry generation
// ---------------------------------------------------------------------------

/// Deterministic jitter in [-0.5, 0.5) from an index, used to break exact
/// cocircularity of structured point layouts before triangulation.
fn jitter_unit(seed: u64) -> f64 {
    let mut x = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    x ^= x >> 33;
    x = x.wrapping_mul(0xFF51_AFD7_ED55_8CCD);
    x ^= x >> 33;
    (x >> 11) as f64 / (1u64 << 53) as f64 - 0.5
}

const JITTER_SCALE: f64 = 1e-7;

fn jittered(p: [f64; 2], h: f64, seed: &mut u64) -> [f64; 2] {
    let s0 = *seed;
    *seed += 2;
    [
        p[0] + JITTER_SCALE * h * jitter_unit(s0),
        p[1] + JITTER_SCALE * h * jitter_unit(s0 + 1),
    ]
}

/// Points on the ellipse `(x/tx)^2 + (y/ty)^2 = 1`, approximately equally
/// spaced in arclength, counterclockwise starting at angle zero.
fn ellipse_points(tx: f64, ty: f64, target_edge: f64, seed: &mut u64) -> Vec<[f64; 2]> {
    // cumulative arclength over a fine parameter grid
    let fine = 16 * 1024;
    let mut cum = Vec::with_capacity(fine + 1);
    cum.push(0.0);
    let mut prev = [tx, 0.0];
    for k in 1..=fine {
        let th = 2.0 * std::f64::consts::PI * k as f64 / fine as f64;
        let p = [tx * th.cos(), ty * th.sin()];
        let d = ((p[0] - prev[0]).powi(2) + (p[1] - prev[1]).powi(2)).sqrt();
        cum.push(cum[k - 1] + d);
        prev = p;
    }
    let perimeter = *cum.last().unwrap();
    let n = ((perimeter / target_edge).round() as usize).max(8);
    let mut pts = Vec::with_capacity(n);
    let mut j = 0usize;
    for k in 0..n {
        let s = perimeter * k as f64 / n as f64;
        while j + 1 < cum.len() && cum[j + 1] < s {
            j += 1;
        }
        let t0 = 2.0 * std::f64::consts::PI * j as f64 / fine as f64;
        let t1 = 2.0 * std::f64::consts::PI * (j + 1) as f64 / fine as f64;
        let w = if cum[j + 1] > cum[j] {
            (s - cum[j]) / (cum[j + 1] - cum[j])
        } else {
            0.0
        };
        let th = t0 + w * (t1 - t0);
        pts.push(jittered([tx * th.cos(), ty * th.sin()], target_edge, seed));
    }
    pts
}

fn circle_points(center: [f64; 2], r: f64, n: usize, edge: f64, seed: &mut u64) -> Vec<[f64; 2]> {
    (0..n)
        .map(|k| {
            let th = 2.0 * std::f64::consts::PI * k as f64 / n as f64;
            jittered(
                [center[0] + r * th.cos(), center[1] + r * th.sin()],
                edge,
                seed,
            )
        })
        .collect()
}

/// Approximate signed distance to the ellipse (negative inside).
fn ellipse_signed_distance(p: [f64; 2], tx: f64, ty: f64) -> f64 {
    let e = (p[0] / tx).powi(2) + (p[1] / ty).powi(2) - 1.0;
    let g = 2.0 * ((p[0] / (tx * tx)).powi(2) + (p[1] / (ty * ty)).powi(2)).sqrt();
    if g > 0.0 {
        e / g
    } else {
        -tx.min(ty)
    }
}

/// Build the idealized torso-heart mesh and its circular fiber field.
pub fn build_idealized_geometry(params: &GeometryParams) -> Result<(TriMesh, FiberField)> {
    params.validate()?;
    let mut seed = 1u64;
    let tx = params.torso_semi_axis_x;
    let ty = params.torso_semi_axis_y;
    let xh = params.heart_center;
    let (r_endo, r_epi) = (params.endo_radius, params.epi_radius);
    let h_heart = params.heart_edge;
    let h_torso = params.torso_edge;
    let grade = 0.35;

    let mut vertices: Vec<[f64; 2]> = Vec::new();
    let push_group = |vertices: &mut Vec<[f64; 2]>, pts: Vec<[f64; 2]>| -> Vec<usize> {
        let start = vertices.len();
        vertices.extend(pts);
        (start..vertices.len()).collect()
    };

    // Shared rings: annulus ring count chosen from the mid-radius circumference.
    let r_mid = 0.5 * (r_endo + r_epi);
    let n_theta = ((2.0 * std::f64::consts::PI * r_mid / h_heart).round() as usize).max(12);
    let n_radial = (((r_epi - r_endo) / h_heart).round() as usize).max(1);

    // ring 0 = endocardium ... ring n_radial = epicardium
    let mut ring_ids: Vec<Vec<usize>> = Vec::with_capacity(n_radial + 1);
    for j in 0..=n_radial {
        let r = r_endo + (r_epi - r_endo) * j as f64 / n_radial as f64;
        let pts = circle_points(xh, r, n_theta, h_heart, &mut seed);
        ring_ids.push(push_group(&mut vertices, pts));
    }
    let endo_ids = ring_ids[0].clone();
    let epi_ids = ring_ids[n_radial].clone();

    // structured annulus triangles, alternating quad diagonals
    let mut triangles: Vec<Triangle> = Vec::new();
    for j in 0..n_radial {
        for i in 0..n_theta {
            let i1 = (i + 1) % n_theta;
            let (a, b) = (ring_ids[j][i], ring_ids[j][i1]);
            let (c, d) = (ring_ids[j + 1][i], ring_ids[j + 1][i1]);
            // counterclockwise quad: a (inner) -> c (outer) -> d -> b
            let (t1, t2) = if (i + j) % 2 == 0 {
                ([a, d, b], [a, c, d])
            } else {
                ([a, c, b], [c, d, b])
            };
            triangles.push(Triangle { vertices: t1, region: Region::Heart });
            triangles.push(Triangle { vertices: t2, region: Region::Heart });
        }
    }

    // blood pool: graded rings from the endocardium inward, plus center
    let h_endo = 2.0 * std::f64::consts::PI * r_endo / n_theta as f64;
    let mut blood_local: Vec<usize> = endo_ids.clone();
    {
        let mut r = r_endo;
        let mut k = 0usize;
        loop {
            let h = (h_endo + grade * (r_endo - r)).min(h_torso);
            r -= h;
            let h_here = (h_endo + grade * (r_endo - r)).min(h_torso);
            if r < 0.8 * h_here {
                break;
            }
            let n = ((2.0 * std::f64::consts::PI * r / h_here).round() as usize).max(6);
            let offset = if k % 2 == 1 { std::f64::consts::PI / n as f64 } else { 0.0 };
            let pts: Vec<[f64; 2]> = (0..n)
                .map(|m| {
                    let th = 2.0 * std::f64::consts::PI * m as f64 / n as f64 + offset;
                    jittered(
                        [xh[0] + r * th.cos(), xh[1] + r * th.sin()],
                        h_here,
                        &mut seed,
                    )
                })
                .collect();
            blood_local.extend(push_group(&mut vertices, pts));
            k += 1;
        }
        let center = push_group(&mut vertices, vec![jittered(xh, h_torso, &mut seed)]);
        blood_local.extend(center);
    }
    let blood_pts: Vec<[f64; 2]> = blood_local.iter().map(|&v| vertices[v]).collect();
    let blood_tris = delaunay::triangulate(&blood_pts)?;
    for t in blood_tris {
        triangles.push(Triangle {
            vertices: [blood_local[t[0]], blood_local[t[1]], blood_local[t[2]]],
            region: Region::Blood,
        });
    }

    // torso: ellipse boundary + graded collar around the epicardium
    let ellipse_ids = push_group(&mut vertices, ellipse_points(tx, ty, h_torso, &mut seed));
    let mut torso_local: Vec<usize> = ellipse_ids.clone();
    torso_local.extend(epi_ids.iter().copied());
    {
        let h_epi = 2.0 * std::f64::consts::PI * r_epi / n_theta as f64;
        let far = vertices[ellipse_ids[0]]
            .iter()
            .zip(xh.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
            .max(tx + ty);
        let mut r = r_epi;
        let mut k = 0usize;
        while r < far + 2.0 * h_torso {
            let h = (h_epi + grade * (r - r_epi)).min(h_torso);
            r += h;
            let h_here = (h_epi + grade * (r - r_epi)).min(h_torso);
            let n = ((2.0 * std::f64::consts::PI * r / h_here).round() as usize).max(6);
            let offset = if k % 2 == 1 { std::f64::consts::PI / n as f64 } else { 0.0 };
            let mut pts = Vec::new();
            for m in 0..n {
                let th = 2.0 * std::f64::consts::PI * m as f64 / n as f64 + offset;
                let p = [xh[0] + r * th.cos(), xh[1] + r * th.sin()];
                if ellipse_signed_distance(p, tx, ty) <= -0.55 * h_torso.min(h_here).max(0.5 * h_here)
                {
                    pts.push(jittered(p, h_here, &mut seed));
                }
            }
            if !pts.is_empty() {
                torso_local.extend(push_group(&mut vertices, pts));
            }
            k += 1;
        }
    }
    let torso_pts: Vec<[f64; 2]> = torso_local.iter().map(|&v| vertices[v]).collect();
    let torso_tris = delaunay::triangulate(&torso_pts)?;
    for t in torso_tris {
        let tri = [torso_local[t[0]], torso_local[t[1]], torso_local[t[2]]];
        let bc = [
            (vertices[tri[0]][0] + vertices[tri[1]][0] + vertices[tri[2]][0]) / 3.0,
            (vertices[tri[0]][1] + vertices[tri[1]][1] + vertices[tri[2]][1]) / 3.0,
        ];
        let d = ((bc[0] - xh[0]).powi(2) + (bc[1] - xh[1]).powi(2)).sqrt();
        if d >= r_epi {
            triangles.push(Triangle { vertices: tri, region: Region::Torso });
        }
    }

    let boundary = extract_boundary(&vertices, &triangles)?;
    let mesh = TriMesh { vertices, triangles, boundary };
    mesh.validate()?;

    // circular fibers around the heart center
    let fibers = circular_fibers(&mesh, xh);
    fibers.validate(&mesh)?;
    Ok((mesh, fibers))
}

/// Unit fibers tangent to circles centered at `center`, on heart triangles.
fn circular_fibers(mesh: &TriMesh, center: [f64; 2]) -> FiberField {
    let per = (0..mesh.n_triangles())
        .map(|t| {
            if mesh.triangles[t].region != Region::Heart {
                return None;
            }
            let bc = mesh.triangle_barycenter(t);
            let d = [bc[0] - center[0], bc[1] - center[1]];
            let norm = (d[0] * d[0] + d[1] * d[1]).sqrt();
            Some([-d[1] / norm, d[0] / norm])
        })
        .collect();
    FiberField::new(per)
}

/// Extract the single closed outer boundary loop, oriented
/// counterclockwise, with the arclength origin at the vertex of largest x
/// (ties broken by smallest y).
pub(crate) fn extract_boundary(
    vertices: &[[f64; 2]],
    triangles: &[Triangle],
) -> Result<Boundary> {
    let mut undirected: HashMap<(usize, usize), usize> = HashMap::new();
    for tri in triangles {
        let v = tri.vertices;
        for i in 0..3 {
            let (a, b) = (v[i], v[(i + 1) % 3]);
            *undirected.entry((a.min(b), a.max(b))).or_insert(0) += 1;
        }
    }
    // boundary edges keep their triangle orientation (domain on the left)
    let mut next: HashMap<usize, usize> = HashMap::new();
    let mut n_edges = 0usize;
    for tri in triangles {
        let v = tri.vertices;
        for i in 0..3 {
            let (a, b) = (v[i], v[(i + 1) % 3]);
            if undirected[&(a.min(b), a.max(b))] == 1 {
                if next.insert(a, b).is_some() {
                    return Err(Error::Topology(format!(
                        "boundary is not a manifold curve at vertex {a}"
                    )));
                }
                n_edges += 1;
            }
        }
    }
    if n_edges == 0 {
        return Err(Error::Topology("mesh has no boundary".into()));
    }
    let start = *next.keys().next().unwrap();
    let mut loop_vertices = vec![start];
    let mut cur = start;
    loop {
        let nxt = *next
            .get(&cur)
            .ok_or_else(|| Error::Topology("boundary walk hit a dead end".into()))?;
        if nxt == start {
            break;
        }
        loop_vertices.push(nxt);
        cur = nxt;
        if loop_vertices.len() > n_edges {
            return Err(Error::Topology("boundary walk does not close".into()));
        }
    }
    if loop_vertices.len() != n_edges {
        return Err(Error::Topology(format!(
            "boundary consists of more than one closed loop ({} of {} edges in the first loop)",
            loop_vertices.len(),
            n_edges
        )));
    }

    // orient counterclockwise
    let polygon_area: f64 = loop_vertices
        .iter()
        .zip(loop_vertices.iter().cycle().skip(1))
        .map(|(&a, &b)| {
            let (pa, pb) = (vertices[a], vertices[b]);
            0.5 * (pa[0] * pb[1] - pb[0] * pa[1])
        })
        .take(loop_vertices.len())
        .sum();
    if polygon_area < 0.0 {
        loop_vertices.reverse();
    }

    // rotate so the loop starts at the vertex of largest x (ties: smallest y)
    let origin = (0..loop_vertices.len())
        .max_by(|&i, &j| {
            let (pi, pj) = (vertices[loop_vertices[i]], vertices[loop_vertices[j]]);
            pi[0].partial_cmp(&pj[0])
                .unwrap()
                .then(pj[1].partial_cmp(&pi[1]).unwrap())
        })
        .unwrap();
    loop_vertices.rotate_left(origin);

    let n = loop_vertices.len();
    let mut arclength = Vec::with_capacity(n);
    arclength.push(0.0);
    let mut total = 0.0;
    for i in 0..n {
        let (a, b) = (loop_vertices[i], loop_vertices[(i + 1) % n]);
        let (pa, pb) = (vertices[a], vertices[b]);
        total += ((pb[0] - pa[0]).powi(2) + (pb[1] - pa[1]).powi(2)).sqrt();
        if i + 1 < n {
            arclength.push(total);
        }
    }
    Ok(Boundary {
        loop_vertices,
        arclength,
        total_length: total,
    })
}

/// Boundary point closest to the ellipse point at angle `theta`.
///
/// The semi-axes are recovered from the boundary's bounding box, so this is
/// meaningful for meshes produced by [`build_idealized_geometry`].
pub fn electrode_anchor(mesh: &TriMesh, theta: f64) -> BoundaryPoint {
    let (mut tx, mut ty) = (0.0f64, 0.0f64);
    for &v in &mesh.boundary.loop_vertices {
        tx = tx.max(mesh.vertices[v][0].abs());
        ty = ty.max(mesh.vertices[v][1].abs());
    }
    mesh.project_to_boundary([tx * theta.cos(), ty * theta.sin()])
}

// ---------------------------------------------------------------------------
// Synthetic meshes for calibration tests
// ---------------------------------------------------------------------------

/// Structured rectangular strip `[0, length] x [0, width]`, all heart,
/// fibers along +x.
pub fn build_strip_mesh(length: f64, width: f64, edge: f64) -> Result<(TriMesh, FiberField)> {
    if length <= 0.0 || width <= 0.0 || edge <= 0.0 {
        return Err(Error::Geometry("strip dimensions must be positive".into()));
    }
    let nx = ((length / edge).round() as usize).max(1);
    let ny = ((width / edge).round() as usize).max(1);
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        for i in 0..=nx {
            vertices.push([length * i as f64 / nx as f64, width * j as f64 / ny as f64]);
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (a, b, c, d) = (id(i, j), id(i + 1, j), id(i, j + 1), id(i + 1, j + 1));
            let (t1, t2) = if (i + j) % 2 == 0 {
                ([a, b, d], [a, d, c])
            } else {
                ([a, b, c], [b, d, c])
            };
            triangles.push(Triangle { vertices: t1, region: Region::Heart });
            triangles.push(Triangle { vertices: t2, region: Region::Heart });
        }
    }
    let boundary = extract_boundary(&vertices, &triangles)?;
    let mesh = TriMesh { vertices, triangles, boundary };
    mesh.validate()?;
    let fibers = FiberField::new(vec![Some([1.0, 0.0]); mesh.n_triangles()]);
    Ok((mesh, fibers))
}

/// Unstructured disc of the given radius centered at the origin, all heart,
/// fibers tangent to concentric circles.
pub fn build_disc_mesh(radius: f64, edge: f64) -> Result<(TriMesh, FiberField)> {
    if radius <= 0.0 || edge <= 0.0 || edge > radius {
        return Err(Error::Geometry("disc radius/edge are invalid".into()));
    }
    let mut seed = 7u64;
    let mut pts = Vec::new();
    let n_rings = ((radius / edge).round() as usize).max(1);
    for k in (1..=n_rings).rev() {
        let r = radius * k as f64 / n_rings as f64;
        let n = ((2.0 * std::f64::consts::PI * r / edge).round() as usize).max(6);
        let offset = if k % 2 == 1 { std::f64::consts::PI / n as f64 } else { 0.0 };
        for m in 0..n {
            let th = 2.0 * std::f64::consts::PI * m as f64 / n as f64 + offset;
            pts.push(jittered([r * th.cos(), r * th.sin()], edge, &mut seed));
        }
    }
    pts.push(jittered([0.0, 0.0], edge, &mut seed));
    let tris = delaunay::triangulate(&pts)?;
    let triangles: Vec<Triangle> = tris
        .into_iter()
        .map(|vertices| Triangle { vertices, region: Region::Heart })
        .collect();
    let boundary = extract_boundary(&pts, &triangles)?;
    let mesh = TriMesh { vertices: pts, triangles, boundary };
    mesh.validate()?;
    let fibers = circular_fibers(&mesh, [0.0, 0.0]);
    Ok((mesh, fibers))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coarse_params() -> GeometryParams {
        GeometryParams::default().scaled_edges(8.0)
    }

    /// Independent perimeter oracle: dense Simpson quadrature of the
    /// ellipse arclength integrand.
    fn ellipse_perimeter_oracle(tx: f64, ty: f64) -> f64 {
        let n = 1 << 16;
        let f = |theta: f64| {
            ((tx * theta.sin()).powi(2) + (ty * theta.cos()).powi(2)).sqrt()
        };
        let h = 2.0 * std::f64::consts::PI / n as f64;
        let mut acc = f(0.0) + f(2.0 * std::f64::consts::PI);
        for k in 1..n {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(k as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn idealized_geometry_regions_and_areas() {
        // desk-scale resolution: boundary faceting stays within the 1% area
        // contract (a 4 cm boundary edge on the ellipse would not)
        let params = GeometryParams::default().scaled_edges(4.0);
        let (mesh, _) = build_idealized_geometry(&params).unwrap();
        for region in [Region::Heart, Region::Blood, Region::Torso] {
            assert!(
                mesh.triangles.iter().any(|t| t.region == region),
                "missing region {region:?}"
            );
        }
        // annulus area pi (epi^2 - endo^2) = 5 pi
        let heart = mesh.region_area(Region::Heart);
        let exact = std::f64::consts::PI * 5.0;
        assert!(
            (heart - exact).abs() < 0.02 * exact,
            "heart area {heart} vs {exact}"
        );
        // full ellipse area within 1% (boundary faceting)
        let total = mesh.total_area();
        let ellipse = std::f64::consts::PI * 10.0 * 15.0;
        assert!(
            (total - ellipse).abs() < 0.01 * ellipse,
            "total area {total} vs {ellipse}"
        );
    }

    #[test]
    fn boundary_length_matches_perimeter_oracle() {
        let (mesh, _) = build_idealized_geometry(&coarse_params()).unwrap();
        let oracle = ellipse_perimeter_oracle(10.0, 15.0);
        let got = mesh.boundary.total_length;
        assert!(
            (got - oracle).abs() < 0.01 * oracle,
            "perimeter {got} vs oracle {oracle}"
        );
    }

    #[test]
    fn median_heart_edge_tracks_the_target() {
        let mut params = coarse_params();
        params.heart_edge = 0.2;
        let (mesh, _) = build_idealized_geometry(&params).unwrap();
        let median = mesh.median_edge(Region::Heart);
        assert!(
            (median - 0.2).abs() <= 0.25 * 0.2,
            "median heart edge {median} vs target 0.2"
        );
    }

    #[test]
    fn electrode_anchors_hit_the_named_points() {
        use std::f64::consts::PI;
        let (mesh, _) = build_idealized_geometry(&coarse_params()).unwrap();
        let max_edge = (0..mesh.boundary.n())
            .map(|i| mesh.boundary.segment_length(i))
            .fold(0.0, f64::max);
        for (theta, expect) in [
            (1.5 * PI, [0.0, -15.0]),
            (PI, [-10.0, 0.0]),
            (0.0, [10.0, 0.0]),
        ] {
            let p = electrode_anchor(&mesh, theta);
            let d = (p.position[0] - expect[0]).hypot(p.position[1] - expect[1]);
            assert!(d <= max_edge, "anchor at {theta} is {d} from {expect:?}");
        }
    }

    #[test]
    fn fibers_are_orthogonal_to_the_radius() {
        let params = coarse_params();
        let (mesh, fibers) = build_idealized_geometry(&params).unwrap();
        for (t, tri) in mesh.triangles.iter().enumerate() {
            if tri.region != Region::Heart {
                continue;
            }
            let f = fibers.get(t).unwrap();
            let bc = mesh.triangle_barycenter(t);
            let d = [bc[0] - params.heart_center[0], bc[1] - params.heart_center[1]];
            let norm = (d[0] * d[0] + d[1] * d[1]).sqrt();
            let dot = (f[0] * d[0] + f[1] * d[1]) / norm;
            assert!(dot.abs() < 1e-12, "fiber not tangent: {dot}");
        }
    }

    #[test]
    fn boundary_walk_closes_and_arclength_is_cyclic() {
        let (mesh, _) = build_idealized_geometry(&coarse_params()).unwrap();
        let b = &mesh.boundary;
        let n = b.n();
        // walking all segments returns to the start with the full length
        let total: f64 = (0..n).map(|i| b.segment_length(i)).sum();
        assert!((total - b.total_length).abs() < 1e-12 * b.total_length);
        // arclength differences are invariant under cyclic re-indexing
        for shift in [1usize, 7, n / 2] {
            for i in 0..n {
                let j = (i + shift) % n;
                let d_direct = b.geodesic_distance(b.arclength[i], b.arclength[j]);
                let (pi, pj) = (
                    mesh.boundary_vertex_position(i),
                    mesh.boundary_vertex_position(j),
                );
                // geodesic distance at least the chord length
                let chord = (pi[0] - pj[0]).hypot(pi[1] - pj[1]);
                assert!(d_direct + 1e-9 >= chord);
            }
        }
    }

    #[test]
    fn degenerate_params_are_rejected() {
        let mut params = GeometryParams::default();
        params.heart_center = [9.0, 0.0];
        assert!(build_idealized_geometry(&params).is_err());
        let mut params = GeometryParams::default();
        params.endo_radius = 3.5;
        assert!(params.validate().is_err());
    }

    #[test]
    fn save_load_round_trip_is_exact() {
        let (mesh, fibers) = build_idealized_geometry(&coarse_params()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("mesh.txt");
        save_mesh(&path, &mesh, &fibers).unwrap();
        let (loaded, loaded_fibers) = load_mesh(&path).unwrap();
        assert_eq!(loaded.n_vertices(), mesh.n_vertices());
        assert_eq!(loaded.n_triangles(), mesh.n_triangles());
        assert_eq!(loaded.vertices, mesh.vertices);
        for t in 0..mesh.n_triangles() {
            assert_eq!(loaded.triangles[t].vertices, mesh.triangles[t].vertices);
            assert_eq!(loaded.triangles[t].region, mesh.triangles[t].region);
            assert_eq!(loaded_fibers.get(t), fibers.get(t));
        }
        assert_eq!(loaded.boundary.loop_vertices, mesh.boundary.loop_vertices);
    }

    #[test]
    fn malformed_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        // triangle referencing a missing vertex
        let path = dir.path().join("bad_index.txt");
        std::fs::write(
            &path,
            "leadfield-mesh v1\n3 1\n0 0\n1 0\n0 1\n0 1 7 torso\n",
        )
        .unwrap();
        let err = load_mesh(&path).unwrap_err();
        assert!(err.to_string().contains("vertex"), "{err}");

        // two disjoint triangles: boundary forms two loops
        let path = dir.path().join("two_loops.txt");
        std::fs::write(
            &path,
            "leadfield-mesh v1\n6 2\n0 0\n1 0\n0 1\n5 5\n6 5\n5 6\n0 1 2 torso\n3 4 5 torso\n",
        )
        .unwrap();
        let err = load_mesh(&path).unwrap_err();
        assert!(
            err.to_string().contains("loop"),
            "expected topology error, got {err}"
        );

        // unknown region tag
        let path = dir.path().join("bad_tag.txt");
        std::fs::write(&path, "leadfield-mesh v1\n3 1\n0 0\n1 0\n0 1\n0 1 2 bone\n").unwrap();
        assert!(load_mesh(&path).is_err());
    }

    #[test]
    fn strip_and_disc_constructors() {
        let (strip, strip_fibers) = build_strip_mesh(2.0, 0.4, 0.1).unwrap();
        assert!(strip.triangles.iter().all(|t| t.region == Region::Heart));
        assert!((strip.total_area() - 0.8).abs() < 1e-9);
        assert!(strip_fibers.get(0) == Some([1.0, 0.0]));

        let (disc, _) = build_disc_mesh(1.0, 0.1).unwrap();
        let area = disc.total_area();
        let exact = std::f64::consts::PI;
        assert!((area - exact).abs() < 0.01 * exact, "disc area {area}");
    }
}
