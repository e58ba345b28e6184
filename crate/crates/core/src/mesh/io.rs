//! Plain-text mesh persistence and VTK legacy ASCII export.
//!
//! Text format (whitespace separated, `#` starts no comments -- the format
//! is strict):
//!
//! ```text
//! leadfield-mesh v1
//! <n_vertices> <n_triangles>
//! x y                 one line per vertex (cm)
//! i j k tag           one line per triangle, tag in {heart, blood, torso}
//! fx fy               one line per heart triangle, in triangle order
//! ```
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! save/load round trip reproduces every coordinate bit for bit. The
//! boundary polyline is not stored; it is re-extracted on load, which is
//! deterministic.

use super::{extract_boundary, FiberField, Region, TriMesh, Triangle};
use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

pub fn save_mesh(path: &Path, mesh: &TriMesh, fibers: &FiberField) -> Result<()> {
    let mut out = String::new();
    out.push_str("leadfield-mesh v1\n");
    writeln!(out, "{} {}", mesh.n_vertices(), mesh.n_triangles()).unwrap();
    for v in &mesh.vertices {
        writeln!(out, "{} {}", v[0], v[1]).unwrap();
    }
    for tri in &mesh.triangles {
        writeln!(
            out,
            "{} {} {} {}",
            tri.vertices[0],
            tri.vertices[1],
            tri.vertices[2],
            tri.region.as_str()
        )
        .unwrap();
    }
    for t in 0..mesh.n_triangles() {
        if mesh.triangles[t].region == Region::Heart {
            let f = fibers.get(t).ok_or_else(|| {
                Error::Geometry(format!("heart triangle {t} is missing a fiber"))
            })?;
            writeln!(out, "{} {}", f[0], f[1]).unwrap();
        }
    }
    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

struct Lines<R> {
    reader: R,
    line: usize,
    buf: String,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<&str> {
        self.buf.clear();
        let n = self.reader.read_line(&mut self.buf)?;
        self.line += 1;
        if n == 0 {
            return Err(Error::MeshFormat {
                line: self.line,
                message: "unexpected end of file".into(),
            });
        }
        Ok(self.buf.trim_end())
    }

    fn fail(&self, message: impl Into<String>) -> Error {
        Error::MeshFormat {
            line: self.line,
            message: message.into(),
        }
    }
}

pub fn load_mesh(path: &Path) -> Result<(TriMesh, FiberField)> {
    let file = std::fs::File::open(path)?;
    let mut lines = Lines {
        reader: BufReader::new(file),
        line: 0,
        buf: String::new(),
    };

    let header = lines.next()?.to_string();
    if header != "leadfield-mesh v1" {
        return Err(lines.fail(format!("unrecognized header '{header}'")));
    }
    let counts = lines.next()?.to_string();
    let mut it = counts.split_whitespace();
    let nv: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| lines.fail("expected vertex count"))?;
    let nt: usize = it
        .next()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| lines.fail("expected triangle count"))?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let line = lines.next()?.to_string();
        let mut it = line.split_whitespace();
        let x: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| lines.fail("expected vertex x coordinate"))?;
        let y: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| lines.fail("expected vertex y coordinate"))?;
        vertices.push([x, y]);
    }

    let mut triangles = Vec::with_capacity(nt);
    let mut n_heart = 0usize;
    for _ in 0..nt {
        let line = lines.next()?.to_string();
        let mut it = line.split_whitespace();
        let mut v = [0usize; 3];
        for slot in &mut v {
            *slot = it
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| lines.fail("expected vertex index"))?;
            if *slot >= nv {
                return Err(lines.fail(format!(
                    "triangle references vertex {} but the mesh has {nv} vertices",
                    slot
                )));
            }
        }
        let tag = it
            .next()
            .ok_or_else(|| lines.fail("expected region tag"))?;
        let region = Region::parse(tag)
            .ok_or_else(|| lines.fail(format!("unknown region tag '{tag}'")))?;
        if region == Region::Heart {
            n_heart += 1;
        }
        triangles.push(Triangle { vertices: v, region });
    }

    let mut fibers = vec![None; nt];
    let mut heart_iter = (0..nt).filter(|&t| triangles[t].region == Region::Heart);
    for _ in 0..n_heart {
        let t = heart_iter.next().unwrap();
        let line = lines.next()?.to_string();
        let mut it = line.split_whitespace();
        let fx: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| lines.fail("expected fiber x component"))?;
        let fy: f64 = it
            .next()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| lines.fail("expected fiber y component"))?;
        fibers[t] = Some([fx, fy]);
    }

    let boundary = extract_boundary(&vertices, &triangles)?;
    let mesh = TriMesh {
        vertices,
        triangles,
        boundary,
    };
    mesh.validate()?;
    let fibers = FiberField::new(fibers);
    fibers.validate(&mesh)?;
    Ok((mesh, fibers))
}

// ---------------------------------------------------------------------------
// VTK legacy ASCII export
// ---------------------------------------------------------------------------

pub enum VtkPointData<'a> {
    Scalars { name: &'a str, values: &'a [f64] },
}

pub enum VtkCellData<'a> {
    Scalars { name: &'a str, values: &'a [f64] },
    IntScalars { name: &'a str, values: &'a [i64] },
    /// 2-D vectors written with a zero z component; `None` becomes (0,0,0).
    Vectors {
        name: &'a str,
        values: &'a [Option<[f64; 2]>],
    },
}

/// Write the tagged mesh plus nodal/cell fields as a VTK legacy
/// unstructured grid (triangle cells, z = 0).
pub fn write_vtk(
    path: &Path,
    mesh: &TriMesh,
    point_data: &[VtkPointData<'_>],
    cell_data: &[VtkCellData<'_>],
) -> Result<()> {
    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("leadfield mesh\n");
    out.push_str("ASCII\n");
    out.push_str("DATASET UNSTRUCTURED_GRID\n");
    writeln!(out, "POINTS {} double", mesh.n_vertices()).unwrap();
    for v in &mesh.vertices {
        writeln!(out, "{} {} 0", v[0], v[1]).unwrap();
    }
    let nt = mesh.n_triangles();
    writeln!(out, "CELLS {} {}", nt, 4 * nt).unwrap();
    for tri in &mesh.triangles {
        writeln!(out, "3 {} {} {}", tri.vertices[0], tri.vertices[1], tri.vertices[2]).unwrap();
    }
    writeln!(out, "CELL_TYPES {nt}").unwrap();
    for _ in 0..nt {
        out.push_str("5\n");
    }

    if !cell_data.is_empty() {
        writeln!(out, "CELL_DATA {nt}").unwrap();
        for data in cell_data {
            match data {
                VtkCellData::Scalars { name, values } => {
                    check_len(values.len(), nt, name)?;
                    writeln!(out, "SCALARS {name} double 1").unwrap();
                    out.push_str("LOOKUP_TABLE default\n");
                    for v in *values {
                        writeln!(out, "{v}").unwrap();
                    }
                }
                VtkCellData::IntScalars { name, values } => {
                    check_len(values.len(), nt, name)?;
                    writeln!(out, "SCALARS {name} int 1").unwrap();
                    out.push_str("LOOKUP_TABLE default\n");
                    for v in *values {
                        writeln!(out, "{v}").unwrap();
                    }
                }
                VtkCellData::Vectors { name, values } => {
                    check_len(values.len(), nt, name)?;
                    writeln!(out, "VECTORS {name} double").unwrap();
                    for v in *values {
                        let f = v.unwrap_or([0.0, 0.0]);
                        writeln!(out, "{} {} 0", f[0], f[1]).unwrap();
                    }
                }
            }
        }
    }

    if !point_data.is_empty() {
        writeln!(out, "POINT_DATA {}", mesh.n_vertices()).unwrap();
        for data in point_data {
            match data {
                VtkPointData::Scalars { name, values } => {
                    check_len(values.len(), mesh.n_vertices(), name)?;
                    writeln!(out, "SCALARS {name} double 1").unwrap();
                    out.push_str("LOOKUP_TABLE default\n");
                    for v in *values {
                        writeln!(out, "{v}").unwrap();
                    }
                }
            }
        }
    }

    let mut file = std::fs::File::create(path)?;
    file.write_all(out.as_bytes())?;
    Ok(())
}

fn check_len(got: usize, want: usize, name: &str) -> Result<()> {
    if got != want {
        return Err(Error::Dimension(format!(
            "VTK field '{name}' has {got} values, expected {want}"
        )));
    }
    Ok(())
}
