//! The full run: load → mask → resample → mesh → solve → rasterize → metrics.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use mammofem_core::mesher::{export_vtk, export_vtk_with_displacement, mesh_from_labels, quality_report};
use mammofem_core::metrics::{ensemble_argmax, render_table};
use mammofem_core::rasterize::{covering_grid, rasterize_mesh};
use mammofem_core::solvers::{solve_explicit, solve_implicit, FailureReason, PlateState, SolverKind, TraceEntry};
use mammofem_core::volume::{
    apply_breast_mask, generate_phantom, load_label_volume, load_mask, load_probability_volume, resample_isotropic,
    save_label_volume,
};
use mammofem_core::{
    CompressionSetup, DeformedMesh, LabelVolume, MaterialTable, MetricsReport, SimulationResult, SolveStatus, TetMesh,
};
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, SolverConfig};
use crate::manifest::{RunManifest, SolverRecord};
use crate::{usage, EXIT_OK, EXIT_SIMULATION, EXIT_USAGE};

/// Everything in a solver result except the displacement field, which goes
/// to VTK.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub solver: SolverKind,
    pub status: SolveStatus,
    pub failure_reason: Option<FailureReason>,
    pub final_residual_ratio: f64,
    pub plates: PlateState,
    pub iterations: usize,
    pub time_step: f64,
    pub ramp_time: f64,
    pub penalty_per_node: f64,
    pub trace: Vec<TraceEntry>,
}

impl From<&SimulationResult> for SimulationSummary {
    fn from(r: &SimulationResult) -> Self {
        SimulationSummary {
            solver: r.solver,
            status: r.status,
            failure_reason: r.failure_reason.clone(),
            final_residual_ratio: r.final_residual_ratio,
            plates: r.plates,
            iterations: r.iterations,
            time_step: r.time_step,
            ramp_time: r.ramp_time,
            penalty_per_node: r.penalty_per_node,
            trace: r.trace.clone(),
        }
    }
}

pub fn volume_path(dir: &Path, stem: &str, format: &str) -> PathBuf {
    dir.join(format!("{stem}.{format}"))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

pub fn save_volume(vol: &LabelVolume, path: PathBuf, outputs: &mut Vec<PathBuf>) -> Result<()> {
    save_label_volume(vol, &path).with_context(|| format!("writing {}", path.display()))?;
    outputs.push(path.clone());
    if path.extension().is_some_and(|e| e == "mhd") {
        outputs.push(path.with_extension("raw"));
    }
    Ok(())
}

/// Labels from the configured source, masked, on their native grid.
pub fn load_input(cfg: &PipelineConfig) -> Result<LabelVolume> {
    if let Some(spec) = &cfg.phantom {
        let (vol, mask) = generate_phantom(spec)?;
        return Ok(apply_breast_mask(&vol, &mask)?);
    }
    let input = cfg.input.as_ref().expect("validated config has a source");
    let vol = match &input.labels {
        Some(p) => load_label_volume(p).with_context(|| format!("loading {}", p.display()))?,
        None => {
            let probs = input
                .probabilities
                .iter()
                .map(|p| load_probability_volume(p).with_context(|| format!("loading {}", p.display())))
                .collect::<Result<Vec<_>>>()?;
            ensemble_argmax(&probs, input.weights.as_deref())?
        }
    };
    match &input.mask {
        Some(p) => {
            let mask = load_mask(p).with_context(|| format!("loading {}", p.display()))?;
            Ok(apply_breast_mask(&vol, &mask)?)
        }
        None => Ok(vol),
    }
}

pub fn run_solver(
    kind: SolverKind,
    mesh: &TetMesh,
    table: &MaterialTable,
    setup: &CompressionSetup,
    solver: &SolverConfig,
) -> Result<SimulationResult> {
    Ok(match kind {
        SolverKind::Explicit => solve_explicit(mesh, table, setup, &solver.explicit)?,
        SolverKind::Implicit => solve_implicit(mesh, table, setup, &solver.implicit)?,
    })
}

/// Writes `simulation_<kind>.json` and `displacement_<kind>.vtk`.
pub fn write_solution(dir: &Path, mesh: &TetMesh, r: &SimulationResult, outputs: &mut Vec<PathBuf>) -> Result<()> {
    let json = dir.join(format!("simulation_{}.json", r.solver));
    write_json(&json, &SimulationSummary::from(r))?;
    outputs.push(json);
    let vtk = dir.join(format!("displacement_{}.vtk", r.solver));
    export_vtk_with_displacement(mesh, &r.displacements_mm(), &vtk)?;
    outputs.push(vtk);
    Ok(())
}

pub fn solver_record(kind: SolverKind, r: &Result<SimulationResult>) -> SolverRecord {
    match r {
        Ok(r) => SolverRecord {
            solver: kind.to_string(),
            status: if r.converged() { "converged" } else { "failed" }.into(),
            failure_reason: r.failure_reason.as_ref().map(|f| f.to_string()),
            iterations: r.iterations,
            final_residual_ratio: r.final_residual_ratio,
            wall_time_s: r.wall_time_s,
        },
        Err(e) => SolverRecord {
            solver: kind.to_string(),
            status: "failed".into(),
            failure_reason: Some(format!("{e:#}")),
            iterations: 0,
            final_residual_ratio: f64::NAN,
            wall_time_s: 0.0,
        },
    }
}

/// Runs `body` and writes the manifest into `dir` whatever happens. Returns
/// the exit code.
pub fn with_manifest(
    command: &str,
    config: serde_json::Value,
    dir: &Path,
    body: impl FnOnce(&mut RunManifest) -> Result<i32>,
) -> Result<i32> {
    let mut manifest = RunManifest::new(command, config);
    let code = match body(&mut manifest) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<crate::UsageError>().is_some() {
                EXIT_USAGE
            } else {
                1
            }
        }
    };
    manifest.finish(dir, code)?;
    Ok(code)
}

pub fn run_pipeline(cfg: &PipelineConfig) -> Result<i32> {
    let dir = cfg.output.dir.clone();
    with_manifest("pipeline", serde_json::to_value(cfg)?, &dir, |m| pipeline_stages(cfg, &dir, m))
}

/// Validation through meshing. Returns the resampled labels and the mesh.
pub fn mesh_stages(cfg: &PipelineConfig, dir: &Path, manifest: &mut RunManifest) -> Result<(LabelVolume, TetMesh)> {
    manifest.stage("validate", |_| cfg.validate().map_err(usage))?;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let masked = manifest.stage("mask", |_| load_input(cfg).map_err(usage))?;
    let resampled = manifest.stage("resample", |_| {
        let g = masked.grid();
        let pitch = cfg.mesh.pitch_mm.unwrap_or(g.spacing[0].min(g.spacing[1]).min(g.spacing[2]));
        resample_isotropic(&masked, pitch).map_err(usage)
    })?;
    let mesh = manifest.stage("mesh", |out| {
        let mesh = mesh_from_labels(&resampled, cfg.budget()?).map_err(usage)?;
        let vtk = dir.join("mesh.vtk");
        export_vtk(&mesh, &vtk)?;
        out.push(vtk);
        let q = dir.join("mesh_quality.json");
        write_json(&q, &quality_report(&mesh))?;
        out.push(q);
        println!("mesh: {} nodes, {} elements", mesh.num_nodes(), mesh.num_elements());
        Ok(mesh)
    })?;
    Ok((resampled, mesh))
}

fn pipeline_stages(cfg: &PipelineConfig, dir: &Path, manifest: &mut RunManifest) -> Result<i32> {
    let fmt = cfg.output.format.as_str();
    let (resampled, mesh) = mesh_stages(cfg, dir, manifest)?;
    let table = cfg.materials.table()?;

    let mut converged = Vec::new();
    let mut all_ok = true;
    for kind in cfg.solver.kind.kinds() {
        let res = run_solver(kind, &mesh, &table, &cfg.compression, &cfg.solver);
        manifest.solvers.push(solver_record(kind, &res));
        // a failed solve is recorded but does not stop the other solver
        let _ = manifest.stage(&format!("solve_{kind}"), |out| match &res {
            Ok(r) => {
                write_solution(dir, &mesh, r, out)?;
                match &r.failure_reason {
                    Some(f) if !r.converged() => Err(anyhow!("{f}")),
                    _ => Ok(()),
                }
            }
            Err(e) => Err(anyhow!("{e:#}")),
        });
        let rec = manifest.solvers.last().expect("just pushed");
        println!("{kind}: {}{}", rec.status, rec.failure_reason.as_ref().map(|f| format!(" ({f})")).unwrap_or_default());
        match res {
            Ok(r) if r.converged() => converged.push(r),
            Ok(_) | Err(_) => all_ok = false,
        }
    }

    let maps = manifest.stage("rasterize", |out| {
        let undeformed = DeformedMesh::undeformed(mesh.clone());
        let deformed = converged
            .iter()
            .map(|r| Ok((r.solver, DeformedMesh::new(mesh.clone(), r.displacements_mm())?)))
            .collect::<Result<Vec<_>>>()?;
        let mut boxes = Vec::new();
        for d in std::iter::once(&undeformed).chain(deformed.iter().map(|(_, d)| d)) {
            boxes.extend(d.bounding_box());
        }
        let grid = covering_grid(resampled.grid(), &boxes)?;
        let pre = rasterize_mesh(&undeformed, &grid)?;
        save_volume(&pre, volume_path(dir, "uncompressed", fmt), out)?;
        let mut posts = Vec::new();
        for (kind, d) in deformed {
            let post = rasterize_mesh(&d, &grid)?;
            save_volume(&post, volume_path(dir, &format!("compressed_{kind}"), fmt), out)?;
            posts.push((kind, post));
        }
        Ok((pre, posts))
    })?;

    manifest.stage("metrics", |out| {
        let (pre, posts) = &maps;
        let reports = posts
            .iter()
            .map(|(kind, post)| Ok(MetricsReport::compute(&cfg.output.case_id, &kind.to_string(), pre, post, true)?))
            .collect::<Result<Vec<_>>>()?;
        let json = dir.join("metrics.json");
        write_json(&json, &reports)?;
        out.push(json);
        if !reports.is_empty() {
            let text = render_table(&reports)?;
            let p = dir.join("table.txt");
            std::fs::write(&p, &text)?;
            out.push(p);
            print!("{text}");
        }
        Ok(())
    })?;

    Ok(if all_ok { EXIT_OK } else { EXIT_SIMULATION })
}
