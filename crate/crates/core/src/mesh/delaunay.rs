//! Incremental Bowyer-Watson Delaunay triangulation of planar point sets.
//!
//! Used by the mesh generator to fill convex regions (blood pool, torso
//! annulus complement) with graded point clouds. Point location walks from
//! the last inserted triangle, so spatially coherent insertion orders (ring
//! by ring) run in near-linear time.
//!
//! Predicates are plain f64 determinants. The generator perturbs every
//! point it creates by a deterministic sub-tolerance jitter, which keeps
//! the incircle tests away from the exactly-cocircular configurations a
//! structured point layout would otherwise produce.

use crate::error::{Error, Result};
use std::collections::HashMap;

const DEAD: usize = usize::MAX;

struct Builder {
    points: Vec<[f64; 2]>,
    /// Vertex triples, counterclockwise. Dead triangles have v[0] == DEAD.
    triangles: Vec<[usize; 3]>,
    /// neighbors[t][i] is the triangle sharing the edge v[i] -> v[i+1].
    neighbors: Vec<[Option<usize>; 3]>,
    free: Vec<usize>,
}

fn orient2d(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Positive when `d` lies strictly inside the circumcircle of the
/// counterclockwise triangle `(a, b, c)`.
fn incircle(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> f64 {
    let (adx, ady) = (a[0] - d[0], a[1] - d[1]);
    let (bdx, bdy) = (b[0] - d[0], b[1] - d[1]);
    let (cdx, cdy) = (c[0] - d[0], c[1] - d[1]);
    let ad = adx * adx + ady * ady;
    let bd = bdx * bdx + bdy * bdy;
    let cd = cdx * cdx + cdy * cdy;
    adx * (bdy * cd - cdy * bd) - ady * (bdx * cd - cdx * bd) + ad * (bdx * cdy - cdx * bdy)
}

impl Builder {
    fn alive(&self, t: usize) -> bool {
        self.triangles[t][0] != DEAD
    }

    fn vertex(&self, t: usize, i: usize) -> [f64; 2] {
        self.points[self.triangles[t][i]]
    }

    fn contains(&self, t: usize, p: [f64; 2]) -> bool {
        (0..3).all(|i| {
            orient2d(self.vertex(t, i), self.vertex(t, (i + 1) % 3), p) >= 0.0
        })
    }

    /// Walk from `hint` towards the triangle containing `p`.
    fn locate(&self, hint: usize, p: [f64; 2]) -> Result<usize> {
        let mut cur = hint;
        let cap = 4 * self.triangles.len() + 16;
        for _ in 0..cap {
            let mut moved = false;
            for i in 0..3 {
                let a = self.vertex(cur, i);
                let b = self.vertex(cur, (i + 1) % 3);
                if orient2d(a, b, p) < 0.0 {
                    match self.neighbors[cur][i] {
                        Some(n) => {
                            cur = n;
                            moved = true;
                            break;
                        }
                        None => {
                            return Err(Error::Topology(
                                "point located outside the triangulation hull".into(),
                            ))
                        }
                    }
                }
            }
            if !moved {
                return Ok(cur);
            }
        }
        // Degenerate walk cycle; fall back to a linear scan.
        (0..self.triangles.len())
            .filter(|&t| self.alive(t))
            .find(|&t| self.contains(t, p))
            .ok_or_else(|| Error::Topology("point location failed".into()))
    }

    fn make_triangle(&mut self, v: [usize; 3]) -> usize {
        match self.free.pop() {
            Some(t) => {
                self.triangles[t] = v;
                self.neighbors[t] = [None; 3];
                t
            }
            None => {
                self.triangles.push(v);
                self.neighbors.push([None; 3]);
                self.triangles.len() - 1
            }
        }
    }

    fn kill(&mut self, t: usize) {
        self.triangles[t] = [DEAD; 3];
        self.neighbors[t] = [None; 3];
        self.free.push(t);
    }

    /// Insert point index `pi`, returning one of the new triangles.
    fn insert(&mut self, pi: usize, hint: usize) -> Result<usize> {
        let p = self.points[pi];
        let seed = self.locate(hint, p)?;

        // Grow the cavity of triangles whose circumcircle contains p.
        let mut cavity = vec![seed];
        let mut in_cavity = HashMap::new();
        in_cavity.insert(seed, ());
        let mut stack = vec![seed];
        while let Some(t) = stack.pop() {
            for i in 0..3 {
                if let Some(n) = self.neighbors[t][i] {
                    if !in_cavity.contains_key(&n) {
                        let tri = self.triangles[n];
                        if incircle(
                            self.points[tri[0]],
                            self.points[tri[1]],
                            self.points[tri[2]],
                            p,
                        ) > 0.0
                        {
                            in_cavity.insert(n, ());
                            cavity.push(n);
                            stack.push(n);
                        }
                    }
                }
            }
        }

        // Boundary edges of the cavity, keyed by their start vertex so the
        // fan around p can be linked in loop order.
        let mut loop_edges: HashMap<usize, (usize, Option<usize>)> = HashMap::new();
        for &t in &cavity {
            for i in 0..3 {
                let outside = match self.neighbors[t][i] {
                    Some(n) => {
                        if in_cavity.contains_key(&n) {
                            continue;
                        }
                        Some(n)
                    }
                    None => None,
                };
                let a = self.triangles[t][i];
                let b = self.triangles[t][(i + 1) % 3];
                if loop_edges.insert(a, (b, outside)).is_some() {
                    return Err(Error::Topology(
                        "cavity boundary is not a simple loop (degenerate point set)".into(),
                    ));
                }
            }
        }
        for &t in &cavity {
            self.kill(t);
        }

        // Retriangulate the cavity as a fan around p.
        let start = *loop_edges.keys().next().expect("cavity has boundary edges");
        let mut fan: Vec<(usize, usize, Option<usize>)> = Vec::with_capacity(loop_edges.len());
        let mut a = start;
        loop {
            let (b, outside) = *loop_edges
                .get(&a)
                .ok_or_else(|| Error::Topology("cavity boundary loop is broken".into()))?;
            fan.push((a, b, outside));
            a = b;
            if a == start {
                break;
            }
        }
        if fan.len() != loop_edges.len() {
            return Err(Error::Topology(
                "cavity boundary split into multiple loops".into(),
            ));
        }

        let new: Vec<usize> = fan
            .iter()
            .map(|&(a, b, _)| {
                if orient2d(self.points[a], self.points[b], p) <= 0.0 {
                    return Err(Error::Topology(
                        "degenerate cavity (collinear or duplicate points)".into(),
                    ));
                }
                Ok(self.make_triangle([a, b, pi]))
            })
            .collect::<Result<_>>()?;

        let m = fan.len();
        for (k, &(_, _, outside)) in fan.iter().enumerate() {
            let t = new[k];
            self.neighbors[t][0] = outside;
            self.neighbors[t][1] = Some(new[(k + 1) % m]);
            self.neighbors[t][2] = Some(new[(k + m - 1) % m]);
            if let Some(o) = outside {
                let (oa, ob) = (self.triangles[t][1], self.triangles[t][0]);
                for i in 0..3 {
                    if self.triangles[o][i] == oa && self.triangles[o][(i + 1) % 3] == ob {
                        self.neighbors[o][i] = Some(t);
                    }
                }
            }
        }
        Ok(new[0])
    }
}

/// Delaunay triangulation of `points`; returns counterclockwise vertex
/// triples covering the convex hull. Points must be pairwise distinct and
/// not all collinear.
pub fn triangulate(points: &[[f64; 2]]) -> Result<Vec<[usize; 3]>> {
    let n = points.len();
    if n < 3 {
        return Err(Error::Topology(format!(
            "triangulation needs at least 3 points, got {n}"
        )));
    }

    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in points {
        for k in 0..2 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    let cx = 0.5 * (lo[0] + hi[0]);
    let cy = 0.5 * (lo[1] + hi[1]);
    let r = 16.0 * ((hi[0] - lo[0]).max(hi[1] - lo[1]).max(1.0));

    let mut b = Builder {
        points: points.to_vec(),
        triangles: Vec::with_capacity(2 * n),
        neighbors: Vec::with_capacity(2 * n),
        free: Vec::new(),
    };
    // Enclosing super-triangle; its vertices are stripped afterwards.
    b.points.push([cx - 2.0 * r, cy - r]);
    b.points.push([cx + 2.0 * r, cy - r]);
    b.points.push([cx, cy + 2.0 * r]);
    b.triangles.push([n, n + 1, n + 2]);
    b.neighbors.push([None; 3]);

    let mut hint = 0;
    for pi in 0..n {
        hint = b.insert(pi, hint)?;
    }

    let triangles: Vec<[usize; 3]> = b
        .triangles
        .iter()
        .filter(|t| t[0] != DEAD && t.iter().all(|&v| v < n))
        .copied()
        .collect();
    if triangles.is_empty() {
        return Err(Error::Topology("triangulation produced no triangles".into()));
    }
    Ok(triangles)
}
