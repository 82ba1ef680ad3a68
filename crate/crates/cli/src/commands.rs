//! Subcommands other than `pipeline`.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use mammofem_core::mesher::import_vtk;
use mammofem_core::metrics::{aggregate, render_table};
use mammofem_core::rasterize::{covering_grid, rasterize_mesh};
use mammofem_core::volume::{generate_phantom, load_label_volume, load_probability_volume, save_mask};
use mammofem_core::{DeformedMesh, LabelVolume, MetricsReport, PhantomSpec, Tissue};
use serde_json::json;

use crate::config::{InputConfig, Overrides, PipelineConfig};
use crate::pipeline::{
    mesh_stages, run_solver, save_volume, solver_record, volume_path, with_manifest, write_json, write_solution,
};
use crate::{usage, EXIT_OK, EXIT_SIMULATION};

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        Ok(v) => Err(format!("must be positive, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn print_counts(vol: &LabelVolume) {
    let counts = vol.counts();
    let vv = vol.grid().voxel_volume();
    for t in Tissue::ALL {
        let n = counts[t.code() as usize];
        if n > 0 {
            println!("{:>2} {:<10} {:>10} voxels {:>14.1} mm^3", t.code(), t.name(), n, n as f64 * vv);
        }
    }
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long, default_value_t = 20.0, value_parser = positive)]
    pub radius_mm: f64,
    /// Isotropic voxel spacing (mm).
    #[arg(long, default_value_t = 1.0, value_parser = positive)]
    pub pitch: f64,
    /// Pectoral slab thickness (mm). Defaults to 0.2 of the radius.
    #[arg(long)]
    pub pectoral_mm: Option<f64>,
    /// Gland jitter seed; no jitter when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "mhd", value_parser = ["mhd", "nii"])]
    pub format: String,
}

pub fn phantom(a: &PhantomArgs) -> Result<i32> {
    let mut spec = PhantomSpec::with_radius(a.radius_mm);
    spec.voxel_spacing_mm = [a.pitch; 3];
    if let Some(t) = a.pectoral_mm {
        spec.pectoral_thickness_mm = t;
    }
    spec.jitter_seed = a.seed;
    with_manifest("phantom", json!({ "phantom": &spec }), &a.out_dir, |m| {
        let (vol, mask) = m.stage("generate", |_| generate_phantom(&spec).map_err(usage))?;
        m.stage("write", |out| {
            std::fs::create_dir_all(&a.out_dir)?;
            save_volume(&vol, volume_path(&a.out_dir, "phantom", &a.format), out)?;
            let mp = volume_path(&a.out_dir, "mask", &a.format);
            save_mask(&mask, &mp)?;
            out.push(mp.clone());
            if a.format == "mhd" {
                out.push(mp.with_extension("raw"));
            }
            Ok(())
        })?;
        print_counts(&vol);
        let breast = vol.class_volume_mm3(Tissue::Fat) + vol.class_volume_mm3(Tissue::Gland);
        println!("fat+gland volume: {breast:.1} mm^3");
        Ok(EXIT_OK)
    })
}

#[derive(Debug, Args)]
pub struct MeshArgs {
    /// Label volume; overrides the config's source.
    #[arg(long)]
    pub labels: Option<PathBuf>,
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Isotropic resampling pitch (mm).
    #[arg(long, value_parser = positive)]
    pub pitch: Option<f64>,
    #[command(flatten)]
    pub o: Overrides,
}

pub fn mesh(a: &MeshArgs) -> Result<i32> {
    let mut cfg = PipelineConfig::from_overrides(&a.o).map_err(usage)?;
    if let Some(labels) = &a.labels {
        cfg.phantom = None;
        cfg.input = Some(InputConfig {
            labels: Some(labels.clone()),
            mask: a.mask.clone(),
            ..Default::default()
        });
    }
    if a.pitch.is_some() {
        cfg.mesh.pitch_mm = a.pitch;
    }
    let dir = cfg.output.dir.clone();
    with_manifest("mesh", serde_json::to_value(&cfg)?, &dir, |m| {
        mesh_stages(&cfg, &dir, m)?;
        Ok(EXIT_OK)
    })
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Reference mesh (VTK).
    #[arg(long)]
    pub mesh: PathBuf,
    #[command(flatten)]
    pub o: Overrides,
}

pub fn simulate(a: &SimulateArgs) -> Result<i32> {
    let cfg = PipelineConfig::from_overrides(&a.o).map_err(usage)?;
    let dir = cfg.output.dir.clone();
    with_manifest("simulate", serde_json::to_value(&cfg)?, &dir, |m| {
        cfg.validate_settings().map_err(usage)?;
        let table = cfg.materials.table()?;
        let mesh = m.stage("load", |_| {
            let v = import_vtk(&a.mesh).with_context(|| format!("loading {}", a.mesh.display()));
            Ok(v.map_err(usage)?.mesh)
        })?;
        std::fs::create_dir_all(&dir)?;
        let mut code = EXIT_OK;
        for kind in cfg.solver.kind.kinds() {
            let res = run_solver(kind, &mesh, &table, &cfg.compression, &cfg.solver);
            let rec = solver_record(kind, &res);
            println!("{kind}: {}{}", rec.status, rec.failure_reason.as_ref().map(|f| format!(" ({f})")).unwrap_or_default());
            m.solvers.push(rec);
            m.stage(&format!("solve_{kind}"), |out| match &res {
                Ok(r) => write_solution(&dir, &mesh, r, out),
                Err(_) => Ok(()),
            })?;
            if !res.as_ref().is_ok_and(|r| r.converged()) {
                code = EXIT_SIMULATION;
            }
        }
        Ok(code)
    })
}

#[derive(Debug, Args)]
pub struct RasterizeArgs {
    /// Mesh (VTK); a stored displacement field is applied.
    #[arg(long)]
    pub mesh: PathBuf,
    /// Label volume whose voxel lattice the output follows.
    #[arg(long)]
    pub template: PathBuf,
    /// Further meshes the output grid must also cover. Rasterizing two meshes
    /// with each other as `--cover` puts both maps on the same grid.
    #[arg(long)]
    pub cover: Vec<PathBuf>,
    #[arg(long, default_value = "rasterized")]
    pub name: String,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "mhd", value_parser = ["mhd", "nii"])]
    pub format: String,
}

pub fn rasterize(a: &RasterizeArgs) -> Result<i32> {
    let config = json!({ "mesh": a.mesh, "template": a.template, "cover": a.cover, "name": a.name });
    with_manifest("rasterize", config, &a.out_dir, |m| {
        let (dmesh, template) = m.stage("load", |_| {
            let v = import_vtk(&a.mesh).map_err(usage)?;
            let d = match v.displacement {
                Some(u) => DeformedMesh::new(v.mesh, u)?,
                None => DeformedMesh::undeformed(v.mesh),
            };
            Ok((d, load_label_volume(&a.template).map_err(usage)?))
        })?;
        let mut boxes: Vec<_> = dmesh.bounding_box().into_iter().collect();
        m.stage("cover", |_| {
            for p in &a.cover {
                let v = import_vtk(p).map_err(usage)?;
                let d = match v.displacement {
                    Some(u) => DeformedMesh::new(v.mesh, u)?,
                    None => DeformedMesh::undeformed(v.mesh),
                };
                boxes.extend(d.bounding_box());
            }
            Ok(())
        })?;
        m.stage("rasterize", |out| {
            let grid = covering_grid(template.grid(), &boxes)?;
            let vol = rasterize_mesh(&dmesh, &grid)?;
            std::fs::create_dir_all(&a.out_dir)?;
            save_volume(&vol, volume_path(&a.out_dir, &a.name, &a.format), out)?;
            print_counts(&vol);
            Ok(())
        })?;
        Ok(EXIT_OK)
    })
}

#[derive(Debug, Args)]
pub struct MetricsArgs {
    /// Uncompressed label map.
    #[arg(long)]
    pub pre: PathBuf,
    /// Compressed label map on the same grid.
    #[arg(long)]
    pub post: PathBuf,
    #[arg(long, default_value = "case")]
    pub case_id: String,
    #[arg(long, default_value = "unknown")]
    pub solver_name: String,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

pub fn metrics(a: &MetricsArgs) -> Result<i32> {
    let config = json!({ "pre": a.pre, "post": a.post, "case_id": a.case_id, "solver": a.solver_name });
    with_manifest("metrics", config, &a.out_dir, |m| {
        let report = m.stage("metrics", |out| {
            let pre = load_label_volume(&a.pre).map_err(usage)?;
            let post = load_label_volume(&a.post).map_err(usage)?;
            let r = MetricsReport::compute(&a.case_id, &a.solver_name, &pre, &post, true).map_err(usage)?;
            std::fs::create_dir_all(&a.out_dir)?;
            let p = a.out_dir.join("metrics.json");
            write_json(&p, &[&r])?;
            out.push(p);
            Ok(r)
        })?;
        print!("{}", render_table(&[report])?);
        Ok(EXIT_OK)
    })
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    /// Probability volumes (at least two).
    #[arg(long = "prob", required = true)]
    pub probs: Vec<PathBuf>,
    /// One non-negative weight per volume, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "mhd", value_parser = ["mhd", "nii"])]
    pub format: String,
}

pub fn ensemble(a: &EnsembleArgs) -> Result<i32> {
    let config = json!({ "probabilities": a.probs, "weights": a.weights });
    with_manifest("ensemble", config, &a.out_dir, |m| {
        let vol = m.stage("ensemble", |out| {
            if a.probs.len() < 2 {
                return Err(usage(anyhow::anyhow!("ensembling needs at least two probability volumes")));
            }
            let probs = a
                .probs
                .iter()
                .map(|p| load_probability_volume(p).with_context(|| format!("loading {}", p.display())))
                .collect::<Result<Vec<_>>>()
                .map_err(usage)?;
            let vol = mammofem_core::metrics::ensemble_argmax(&probs, a.weights.as_deref()).map_err(usage)?;
            std::fs::create_dir_all(&a.out_dir)?;
            save_volume(&vol, volume_path(&a.out_dir, "ensemble", &a.format), out)?;
            Ok(vol)
        })?;
        print_counts(&vol);
        Ok(EXIT_OK)
    })
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    /// Metrics files, each holding one report or a list of them.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Writes table.txt and aggregate.json here when given.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn read_reports(path: &Path) -> Result<Vec<MetricsReport>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let value: serde_json::Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    let parsed = if value.is_array() {
        serde_json::from_value(value)
    } else {
        serde_json::from_value(value).map(|r| vec![r])
    };
    parsed.with_context(|| format!("{} is not a metrics report", path.display()))
}

/// Loads reports and checks they were all measured on the same voxel size.
pub fn collect_reports(paths: &[PathBuf]) -> Result<Vec<MetricsReport>> {
    let mut reports = Vec::new();
    for p in paths {
        reports.extend(read_reports(p)?);
    }
    let Some(first) = reports.first() else {
        bail!("no reports in {} file(s)", paths.len());
    };
    let s0 = first.voxel_spacing_mm;
    for r in &reports {
        let same = (0..3).all(|a| (r.voxel_spacing_mm[a] - s0[a]).abs() <= 1e-9 * s0[a].abs());
        if !same {
            bail!(
                "reports use different grids: case {} ({}) has spacing {:?} mm, case {} ({}) has {:?} mm",
                first.case_id,
                first.solver,
                s0,
                r.case_id,
                r.solver,
                r.voxel_spacing_mm
            );
        }
    }
    Ok(reports)
}

pub fn compare(a: &CompareArgs) -> Result<i32> {
    let run = |m: Option<&mut crate::manifest::RunManifest>| -> Result<i32> {
        let reports = collect_reports(&a.reports).map_err(usage)?;
        let table = render_table(&reports)?;
        print!("{table}");
        if let (Some(dir), Some(m)) = (&a.out_dir, m) {
            m.stage("write", |out| {
                std::fs::create_dir_all(dir)?;
                let t = dir.join("table.txt");
                std::fs::write(&t, &table)?;
                out.push(t);
                let j = dir.join("aggregate.json");
                write_json(&j, &aggregate(&reports)?)?;
                out.push(j);
                Ok(())
            })?;
        }
        Ok(EXIT_OK)
    };
    match &a.out_dir {
        Some(dir) => with_manifest("compare", json!({ "reports": a.reports }), dir, |m| run(Some(m))),
        None => run(None),
    }
}
