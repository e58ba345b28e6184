//! Command implementations behind the binary's subcommands.
//!
//! Every command takes a parsed configuration and an output directory,
//! writes its artifacts there and finishes with a manifest listing the
//! configuration checksum and the checksum of every produced file.

use crate::config::{DensityKindSpec, RunConfig};
use crate::ecg::{run_pipeline, Scene};
use crate::error::{Error, Result};
use crate::mesh::{save_mesh, write_vtk, VtkCellData, VtkPointData};
use crate::oracle::{
    forward_bidomain, full_tensor_correlation, mc_statistics, pointwise_ecg, write_comparison_csv,
};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(64);
    for b in digest {
        write!(hex, "{b:02x}").unwrap();
    }
    hex
}

/// Write the run manifest: config checksum, seed, and the checksum of
/// every artifact (sorted by name).
fn write_manifest(out: &Path, cfg: &RunConfig, mut files: Vec<PathBuf>) -> Result<()> {
    files.sort();
    let mut text = String::new();
    writeln!(text, "leadfield manifest v1").unwrap();
    writeln!(text, "package_version {}", env!("CARGO_PKG_VERSION")).unwrap();
    writeln!(text, "config_sha256 {}", sha256_hex(cfg.canonical_toml().as_bytes())).unwrap();
    writeln!(text, "seed {}", cfg.run.seed).unwrap();
    for f in &files {
        let bytes = std::fs::read(f)?;
        let name = f
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        writeln!(text, "file {name} sha256 {}", sha256_hex(&bytes)).unwrap();
    }
    std::fs::write(out.join("manifest.txt"), text)?;
    Ok(())
}

fn ensure_dir(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out)?;
    Ok(())
}

fn region_tags(mesh: &crate::mesh::TriMesh) -> Vec<i64> {
    mesh.triangles
        .iter()
        .map(|t| match t.region {
            crate::mesh::Region::Heart => 0,
            crate::mesh::Region::Blood => 1,
            crate::mesh::Region::Torso => 2,
        })
        .collect()
}

fn fiber_cells(mesh: &crate::mesh::TriMesh, fibers: &crate::mesh::FiberField) -> Vec<Option<[f64; 2]>> {
    (0..mesh.n_triangles()).map(|t| fibers.get(t)).collect()
}

/// Generate the mesh, write the text format and a VTK view of tags and
/// fibers.
pub fn cmd_mesh(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let (mesh, fibers) = crate::mesh::build_idealized_geometry(&cfg.geometry_params())
        .map_err(|e| e.in_stage("mesh"))?;
    let mesh_path = out.join("mesh.txt");
    save_mesh(&mesh_path, &mesh, &fibers)?;
    let vtk_path = out.join("mesh.vtk");
    let tags = region_tags(&mesh);
    let fib = fiber_cells(&mesh, &fibers);
    write_vtk(
        &vtk_path,
        &mesh,
        &[],
        &[
            VtkCellData::IntScalars { name: "region", values: &tags },
            VtkCellData::Vectors { name: "fiber", values: &fib },
        ],
    )?;
    let files = vec![mesh_path, vtk_path];
    write_manifest(out, cfg, files.clone())?;
    Ok(files)
}

/// Solve the activation model and export the arrival times plus a few
/// transmembrane snapshots.
pub fn cmd_activation(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let scene = Scene::build(cfg)?;
    let tau_global = scene.heart.scatter(&scene.activation.tau, -1.0);
    let mut point_fields: Vec<(String, Vec<f64>)> = vec![("tau_ms".into(), tau_global)];
    let nt = scene.times.len();
    for frac in [0.25, 0.5, 0.75, 1.0] {
        let i = ((nt - 1) as f64 * frac).round() as usize;
        point_fields.push((format!("vm_mv_t{:03}", scene.times[i].round() as i64), scene.vm[i].clone()));
    }
    let path = out.join("activation.vtk");
    let tags = region_tags(&scene.mesh);
    let fib = fiber_cells(&scene.mesh, &scene.fibers);
    let borrowed: Vec<VtkPointData<'_>> = point_fields
        .iter()
        .map(|(name, values)| VtkPointData::Scalars { name, values })
        .collect();
    write_vtk(
        &path,
        &scene.mesh,
        &borrowed,
        &[
            VtkCellData::IntScalars { name: "region", values: &tags },
            VtkCellData::Vectors { name: "fiber", values: &fib },
        ],
    )?;

    // arrival times as CSV on heart vertices
    let mut csv = String::from("vertex,x_cm,y_cm,tau_ms\n");
    for (local, &global) in scene.heart.vertex_map.iter().enumerate() {
        let p = scene.mesh.vertices[global];
        writeln!(csv, "{},{},{},{}", global, p[0], p[1], scene.activation.tau[local]).unwrap();
    }
    let tau_path = out.join("tau.csv");
    std::fs::write(&tau_path, csv)?;

    let files = vec![path, tau_path];
    write_manifest(out, cfg, files.clone())?;
    Ok(files)
}

/// Run the full statistics pipeline and write ECG tables, lead-field VTK
/// exports, the scalar summary and the run summary.
pub fn cmd_uq(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let run = run_pipeline(cfg)?;
    let mut files = Vec::new();

    for case in &run.cases {
        let csv = out.join(format!("ecg_{}_{}.csv", case.lead, case.density));
        case.stats.write_csv(&csv)?;
        files.push(csv);

        let vtk = out.join(format!("leadfield_{}_{}.vtk", case.lead, case.density));
        let mut fields: Vec<(String, &[f64])> =
            vec![("expected_lead_field".into(), case.expected_field.as_slice())];
        for (k, zeta) in case.factor_fields.iter().enumerate() {
            fields.push((format!("zeta_{k:03}"), zeta.as_slice()));
        }
        let borrowed: Vec<VtkPointData<'_>> = fields
            .iter()
            .map(|(name, values)| VtkPointData::Scalars { name, values })
            .collect();
        write_vtk(&vtk, &run.scene.mesh, &borrowed, &[])?;
        files.push(vtk);
    }

    let rows = crate::report::summarize(&run.cases, &HashMap::new());
    let summary_csv = out.join("summary.csv");
    crate::report::write_summary_csv(&summary_csv, &rows)?;
    files.push(summary_csv);

    let mut text = String::new();
    writeln!(text, "run summary").unwrap();
    writeln!(text, "mesh: {} vertices, {} triangles", run.scene.mesh.n_vertices(), run.scene.mesh.n_triangles()).unwrap();
    writeln!(
        text,
        "heart median edge {:.4} cm, boundary nodes {}",
        run.scene.mesh.median_edge(crate::mesh::Region::Heart),
        run.scene.mesh.boundary.n()
    )
    .unwrap();
    for case in &run.cases {
        writeln!(
            text,
            "case lead={} density={}: rank {}, residual trace {:.3e}, expectation solve {} iterations (rel res {:.2e}), {:.2} s",
            case.lead,
            case.density,
            case.stats.rank(),
            case.residual_trace,
            case.expected_report.iterations,
            case.expected_report.relative_residual,
            case.seconds
        )
        .unwrap();
    }
    writeln!(text, "total {:.2} s", run.total_seconds).unwrap();
    let summary_txt = out.join("run_summary.txt");
    std::fs::write(&summary_txt, text)?;
    files.push(summary_txt);

    write_manifest(out, cfg, files.clone())?;
    Ok(files)
}

/// Forward conduction solve per time step: boundary traces, pointwise
/// signals and potential snapshots.
pub fn cmd_forward(cfg: &RunConfig, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let scene = Scene::build(cfg)?;
    let snapshots = [20.0, 50.0, 90.0, 110.0];
    let fwd = forward_bidomain(
        &scene.mesh,
        &scene.stiffness,
        &scene.vm_loads,
        &scene.times,
        &scene.solve_opts,
        &snapshots,
    )
    .map_err(|e| e.in_stage("forward"))?;

    let mut files = Vec::new();
    // boundary traces: one row per time step, one column per boundary node
    let mut csv = String::from("t_ms");
    for i in 0..scene.mesh.boundary.n() {
        write!(csv, ",s{}", i).unwrap();
    }
    csv.push('\n');
    for (t, trace) in scene.times.iter().zip(&fwd.traces) {
        write!(csv, "{t}").unwrap();
        for u in trace {
            write!(csv, ",{u}").unwrap();
        }
        csv.push('\n');
    }
    let traces_path = out.join("forward_traces.csv");
    std::fs::write(&traces_path, csv)?;
    files.push(traces_path);

    for (t, field) in &fwd.snapshots {
        let path = out.join(format!("forward_t{:03}.vtk", t.round() as i64));
        write_vtk(
            &path,
            &scene.mesh,
            &[VtkPointData::Scalars { name: "potential_mv", values: field }],
            &[],
        )?;
        files.push(path);
    }

    for lead in cfg.lead_definitions()? {
        let anchors = scene.lead_anchors(&lead)?;
        let signal = pointwise_ecg(&scene.mesh, &fwd, &anchors, &lead)?;
        let mut csv = String::from("t_ms,v_mv\n");
        for (t, v) in scene.times.iter().zip(&signal) {
            writeln!(csv, "{t},{v}").unwrap();
        }
        let path = out.join(format!("forward_ecg_{}.csv", lead.label));
        std::fs::write(&path, csv)?;
        files.push(path);
    }

    write_manifest(out, cfg, files.clone())?;
    Ok(files)
}

/// Outcome of the validation command.
pub struct ValidationOutcome {
    pub files: Vec<PathBuf>,
    pub all_passed: bool,
}

/// Cross-check the lead-field pipeline against the forward pointwise
/// signal and (on small meshes) the dense tensor-product correlation.
pub fn cmd_validate(cfg: &RunConfig, out: &Path) -> Result<ValidationOutcome> {
    ensure_dir(out)?;
    let run = run_pipeline(cfg)?;
    let scene = &run.scene;
    let fwd = forward_bidomain(
        &scene.mesh,
        &scene.stiffness,
        &scene.vm_loads,
        &scene.times,
        &scene.solve_opts,
        &[],
    )
    .map_err(|e| e.in_stage("forward"))?;

    let mut files = Vec::new();
    let mut checks = String::from("check,lead,density,value,threshold,pass\n");
    let mut all = true;
    let record = |checks: &mut String, name: &str, lead: &str, density: &str, value: f64, thr: f64, all: &mut bool| {
        let pass = value <= thr;
        *all &= pass;
        writeln!(checks, "{name},{lead},{density},{value},{thr},{pass}").unwrap();
    };

    // reciprocity per lead
    let leads = cfg.lead_definitions()?;
    for lead in &leads {
        let anchors = scene.lead_anchors(lead)?;
        let pointwise = pointwise_ecg(&scene.mesh, &fwd, &anchors, lead)?;
        let case = run
            .cases
            .iter()
            .find(|c| c.lead == lead.label)
            .ok_or_else(|| Error::Config(format!("no pipeline case for lead {}", lead.label)))?;
        let max_err = case
            .stats
            .deterministic
            .iter()
            .zip(&pointwise)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        let scale = pointwise.iter().fold(1e-300f64, |a, &v| a.max(v.abs()));
        let path = out.join(format!("reciprocity_{}.csv", lead.label));
        write_comparison_csv(&path, &scene.times, &case.stats.deterministic, &pointwise)?;
        files.push(path);
        record(&mut checks, "reciprocity_rel_linf", &lead.label, "-", max_err / scale, 0.01, &mut all);
    }

    // dense tensor-product agreement on small meshes
    if scene.mesh.n_vertices() <= 500 {
        for case in &run.cases {
            let lead = leads
                .iter()
                .find(|l| l.label == case.lead)
                .expect("case lead exists");
            let kind = match case.density {
                "uniform" => DensityKindSpec::Uniform,
                "gaussian" => DensityKindSpec::Gaussian,
                _ => DensityKindSpec::Dirac,
            };
            let joint = scene.joint_density(kind, lead)?;
            let r = crate::assembly::assemble_correlation(&scene.mesh, &joint, lead)?;
            let nt = scene.times.len();
            let stride = (nt / 20).max(1);
            let idx: Vec<usize> = (0..nt).step_by(stride).take(20).collect();
            let dense = full_tensor_correlation(&scene.mesh, &scene.stiffness, &r, &scene.vm_loads, &idx)?;
            let mut num = 0.0f64;
            let mut den = 0.0f64;
            for (a, &ia) in idx.iter().enumerate() {
                for (b, &ib) in idx.iter().enumerate() {
                    let low = case.stats.correlation(ia, ib);
                    let d = low - dense[(a, b)];
                    num += d * d;
                    den += dense[(a, b)] * dense[(a, b)];
                }
            }
            let rel = (num / den.max(1e-300)).sqrt();
            record(&mut checks, "full_tensor_rel_frobenius", &case.lead, case.density, rel, 1e-6, &mut all);
        }
    } else {
        writeln!(checks, "full_tensor_rel_frobenius,-,-,,,skipped (mesh above 500 nodes)").unwrap();
    }

    let checks_path = out.join("validation.csv");
    std::fs::write(&checks_path, checks)?;
    files.push(checks_path);
    write_manifest(out, cfg, files.clone())?;
    Ok(ValidationOutcome { files, all_passed: all })
}

/// Monte-Carlo agreement reports for every lead and density kind.
pub fn cmd_mc(cfg: &RunConfig, out: &Path, n_samples: usize) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let run = run_pipeline(cfg)?;
    let scene = &run.scene;
    let fwd = forward_bidomain(
        &scene.mesh,
        &scene.stiffness,
        &scene.vm_loads,
        &scene.times,
        &scene.solve_opts,
        &[],
    )
    .map_err(|e| e.in_stage("forward"))?;

    let leads = cfg.lead_definitions()?;
    let mut files = Vec::new();
    for case in &run.cases {
        if case.density == "dirac" {
            continue; // nothing to sample
        }
        let lead = leads
            .iter()
            .find(|l| l.label == case.lead)
            .expect("case lead exists");
        let kind = match case.density {
            "uniform" => DensityKindSpec::Uniform,
            _ => DensityKindSpec::Gaussian,
        };
        let joint = scene.joint_density(kind, lead)?;
        let mc = mc_statistics(&scene.mesh, &fwd, &joint, lead, n_samples, scene.seed)?;
        let mut csv = String::from(
            "t_ms,e_mv,e_hat_mv,stderr_mean_mv,var_mv2,var_hat_mv2,stderr_var_mv2\n",
        );
        for i in 0..scene.times.len() {
            writeln!(
                csv,
                "{},{},{},{},{},{},{}",
                scene.times[i],
                case.stats.expected[i],
                mc.mean[i],
                mc.stderr_mean[i],
                case.stats.variance[i],
                mc.variance[i],
                mc.stderr_variance[i]
            )
            .unwrap();
        }
        let path = out.join(format!("mc_{}_{}.csv", case.lead, case.density));
        std::fs::write(&path, csv)?;
        files.push(path);
    }
    write_manifest(out, cfg, files.clone())?;
    Ok(files)
}
