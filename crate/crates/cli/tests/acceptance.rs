//! Acceptance criteria, one line each. Runs without the libtest harness so the
//! PASS/FAIL lines always show; exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use mammofem_core::fem::FemModel;
use mammofem_core::material::{Material, MaterialTable};
use mammofem_core::mesher::{import_vtk, mesh_from_labels, meshed_cell_volume, ElementBudget, TetMesh};
use mammofem_core::metrics::{aggregate, breast_volume_change, dice_per_class, ensemble_argmax, mean_sd, ClassDice};
use mammofem_core::solvers::{
    plate_contact_force, solve_implicit_with, Axis, CompressionSetup, Constraints, ImplicitParams,
};
use mammofem_core::volume::{generate_phantom, Grid, LabelVolume, PhantomSpec, ProbabilityVolume, Tissue};
use mammofem_core::{MetricsReport, MM};
use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn fat() -> Material {
    Material::fat(0.45).unwrap()
}

fn gland() -> Material {
    Material::gland(0.45).unwrap()
}

fn table() -> MaterialTable {
    MaterialTable::breast_defaults(0.45).unwrap()
}

fn block_mesh(dims: [usize; 3]) -> TetMesh {
    let vol = LabelVolume::filled(Grid::new(dims, [1.0; 3], [0.5; 3]).unwrap(), Tissue::Fat);
    mesh_from_labels(&vol, ElementBudget::new(1, usize::MAX).unwrap()).unwrap()
}

fn jitter(mesh: &TetMesh, amount: f64, seed: u64) -> TetMesh {
    let mut r = rng(seed);
    let mut out = mesh.clone();
    for p in &mut out.nodes {
        for c in p.iter_mut() {
            *c += r.gen_range(-amount..amount);
        }
    }
    out.validate().unwrap();
    out
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn affine(model: &FemModel, b: &Matrix3<f64>, c: Vector3<f64>) -> Vec<f64> {
    let mut u = vec![0.0; model.num_dofs()];
    for (n, x) in model.reference.iter().enumerate() {
        let v = b * Vector3::new(x[0], x[1], x[2]) + c;
        u[3 * n..3 * n + 3].copy_from_slice(v.as_slice());
    }
    u
}

// ---------------------------------------------------------------------------
// material and element kernels

fn constitutive_fd() -> Outcome {
    let start = Instant::now();
    let mut r = rng(11);
    let (mut worst_p, mut worst_a) = (0.0f64, 0.0f64);
    let mut n = 0;
    while n < 100 {
        let f = Matrix3::identity() + Matrix3::from_fn(|_, _| r.gen_range(-0.3..0.3));
        if f.determinant() <= 0.2 {
            continue;
        }
        n += 1;
        for m in [fat(), gland()] {
            let h = 1e-6;
            let p = m.pk1_stress(&f).unwrap();
            let a = m.material_tangent(&f).unwrap();
            let mut fd_p = Matrix3::zeros();
            let mut err_a: f64 = 0.0;
            for k in 0..3 {
                for l in 0..3 {
                    let mut fp = f;
                    let mut fm = f;
                    fp[(k, l)] += h;
                    fm[(k, l)] -= h;
                    fd_p[(k, l)] = (m.strain_energy(&fp).unwrap() - m.strain_energy(&fm).unwrap()) / (2.0 * h);
                    let dp = (m.pk1_stress(&fp).unwrap() - m.pk1_stress(&fm).unwrap()) / (2.0 * h);
                    for i in 0..3 {
                        for j in 0..3 {
                            err_a = err_a.max((a[(3 * i + j, 3 * k + l)] - dp[(i, j)]).abs());
                        }
                    }
                }
            }
            worst_p = worst_p.max((p - fd_p).norm() / p.norm().max(m.mu));
            worst_a = worst_a.max(err_a / a.abs().max());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(
        worst_p < 1e-5 && worst_a < 1e-4 && secs < 1.0,
        format!("100 F: stress {worst_p:.1e} (< 1e-5), tangent {worst_a:.1e} (< 1e-4), {secs:.3} s"),
    )
}

fn simple_shear() -> Outcome {
    let mut worst: f64 = 0.0;
    for m in [fat(), gland()] {
        for gamma in [0.05, 0.1, 0.2] {
            let mut f = Matrix3::identity();
            f[(0, 1)] = gamma;
            let p12 = m.pk1_stress(&f).unwrap()[(0, 1)];
            worst = worst.max(((p12 - m.mu * gamma) / (m.mu * gamma)).abs());
        }
    }
    check(worst < 1e-10, format!("max relative error of P12 vs mu*gamma {worst:.1e} (< 1e-10)"))
}

fn patch_test() -> Outcome {
    let base = block_mesh([3, 3, 3]);
    let interior: Vec<bool> = base.nodes.iter().map(|p| p.iter().all(|&c| c > 0.5 && c < 2.5)).collect();
    let mesh = jitter(&base, 0.2, 3);
    let model = FemModel::new(&mesh, &table()).unwrap();
    let b = Matrix3::new(0.08, 0.03, -0.02, 0.01, -0.1, 0.04, -0.03, 0.02, 0.05);
    let mut u = affine(&model, &b, Vector3::new(2e-4, 0.0, -1e-4));
    let free: Vec<usize> = (0..model.num_dofs()).filter(|&d| interior[d / 3]).collect();
    for &d in &free {
        u[d] = 0.0;
    }
    let constrained: Vec<bool> = (0..model.num_dofs()).map(|d| !interior[d / 3]).collect();
    for _ in 0..20 {
        let f = model.internal_forces(&u).unwrap();
        let r = DVector::from_iterator(free.len(), free.iter().map(|&d| -f[d]));
        if r.norm() < 1e-16 {
            break;
        }
        let k = model.assemble_tangent(&u, &constrained).unwrap();
        let kf = DMatrix::from_fn(free.len(), free.len(), |i, j| k.get(free[i], free[j]));
        let du = kf.lu().solve(&r).unwrap();
        for (i, &d) in free.iter().enumerate() {
            u[d] += du[i];
        }
    }
    let worst = (0..model.precomp.len())
        .map(|e| (model.deformation_gradient(e, &u) - Matrix3::identity() - b).abs().max())
        .fold(0.0, f64::max);
    check(
        mesh.num_elements() >= 24 && worst < 1e-12,
        format!("{} tets, max |F - F_target| {worst:.1e} (< 1e-12)", mesh.num_elements()),
    )
}

fn rigid_invariance() -> Outcome {
    let (vol, _) = generate_phantom(&PhantomSpec::with_radius(10.0)).unwrap();
    let meshes = [
        jitter(&block_mesh([3, 2, 2]), 0.15, 5),
        mesh_from_labels(&vol, ElementBudget::new(2000, 5000).unwrap()).unwrap(),
    ];
    let mut r = rng(21);
    let mut worst: f64 = 0.0;
    for mesh in &meshes {
        let model = FemModel::new(mesh, &table()).unwrap();
        let bound = 1e-8 * fat().mu * model.total_volume();
        for _ in 0..20 {
            let axis = Vector3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
            let rot = Rotation3::from_axis_angle(&Unit::new_normalize(axis), r.gen_range(0.0..std::f64::consts::TAU));
            let t = Vector3::new(r.gen_range(-0.05..0.05), r.gen_range(-0.05..0.05), r.gen_range(-0.05..0.05));
            let u = affine(&model, &(rot.matrix() - Matrix3::identity()), t);
            worst = worst.max(norm(&model.internal_forces(&u).unwrap()) / bound);
        }
    }
    check(worst < 1.0, format!("2 meshes x 20 motions, max |f| / (1e-8 mu V) = {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// solvers

fn uniaxial_nominal_stress(m: &Material, stretch: f64) -> f64 {
    let lateral = |l2: f64| {
        let j = stretch * l2 * l2;
        m.mu * (l2 - 1.0 / l2) + m.lambda * j.ln() / l2
    };
    let (mut lo, mut hi) = (1.0, 2.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if lateral(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let l2 = 0.5 * (lo + hi);
    let j = stretch * l2 * l2;
    m.mu * (stretch - 1.0 / stretch) + m.lambda * j.ln() / stretch
}

fn uniaxial() -> Outcome {
    let start = Instant::now();
    let n = 8;
    let mesh = block_mesh([n, n, n]);
    let mut c = Constraints::none(mesh.num_nodes());
    for (i, p) in mesh.nodes.iter().enumerate() {
        if p[0].abs() < 1e-9 {
            c.fix(i, 0);
        }
        if p[1].abs() < 1e-9 {
            c.fix(i, 1);
        }
    }
    let t = table();
    let setup = CompressionSetup {
        axis: Axis::Z,
        compression_fraction: 0.1,
        ..CompressionSetup::default()
    };
    let model = FemModel::new(&mesh, &t).unwrap();
    let res = solve_implicit_with(model, &c, &t, &setup, &ImplicitParams::default()).unwrap();
    if !res.converged() {
        return Err(format!("implicit solve failed: {:?}", res.failure_reason));
    }
    let positions: Vec<[f64; 3]> = mesh
        .nodes
        .iter()
        .zip(&res.displacements)
        .map(|(x, u)| [x[0] * MM + u[0], x[1] * MM + u[1], x[2] * MM + u[2]])
        .collect();
    let contact = plate_contact_force(&positions, &res.plates, res.penalty_per_node);
    let top: f64 = contact.forces.iter().map(|f| f[2]).filter(|&f| f < 0.0).sum();
    let simulated = top / (n as f64 * MM).powi(2);
    let oracle = uniaxial_nominal_stress(t.get(1).unwrap(), 0.9);
    let err = (simulated - oracle).abs() / oracle.abs();
    let secs = start.elapsed().as_secs_f64();
    check(
        err < 0.02 && secs < 30.0 && mesh.num_elements() <= 5000,
        format!(
            "{} tets, nominal stress {simulated:.2} Pa vs oracle {oracle:.2} Pa, error {:.3}% (< 2%), {secs:.1} s",
            mesh.num_elements(),
            100.0 * err
        ),
    )
}

// ---------------------------------------------------------------------------
// phantom runs through the command-line pipeline

struct Run {
    dir: PathBuf,
    code: i32,
    secs: f64,
}

impl Run {
    fn reports(&self) -> Vec<MetricsReport> {
        let text = std::fs::read_to_string(self.dir.join("metrics.json")).unwrap();
        serde_json::from_str(&text).unwrap()
    }

    fn report(&self, solver: &str) -> MetricsReport {
        self.reports().into_iter().find(|r| r.solver == solver).unwrap()
    }

    fn displacement(&self, solver: &str) -> Vec<[f64; 3]> {
        import_vtk(&self.dir.join(format!("displacement_{solver}.vtk"))).unwrap().displacement.unwrap()
    }

    fn manifest(&self) -> Value {
        serde_json::from_str(&std::fs::read_to_string(self.dir.join("manifest.json")).unwrap()).unwrap()
    }
}

fn pipeline(root: &Path, name: &str, config: &str, args: &[&str]) -> Run {
    let dir = root.join(name);
    std::fs::create_dir_all(&dir).unwrap();
    let cfg = dir.join("config.toml");
    std::fs::write(&cfg, config).unwrap();
    let out_dir = dir.join("out");
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_mammofem"))
        .args(["pipeline", "--config", cfg.to_str().unwrap(), "--out-dir", out_dir.to_str().unwrap()])
        .args(args)
        .output()
        .unwrap();
    Run {
        dir: out_dir,
        code: out.status.code().unwrap_or(-1),
        secs: start.elapsed().as_secs_f64(),
    }
}

/// r = 20 mm at 1 mm pitch, 10k-50k elements.
fn phantom_config(poisson: f64) -> String {
    format!(
        "[phantom]\nbreast_radius_mm = 20.0\n\n[mesh]\nelements_min = 10000\nelements_max = 50000\n\n\
         [materials]\npoisson_ratio = {poisson}\n\n[output]\ncase_id = \"phantom\"\n"
    )
}

struct PhantomRuns {
    both_30: Run,
    implicit_10: Run,
    implicit_20: Run,
    implicit_30_nu049: Run,
}

fn phantom_runs(root: &Path) -> PhantomRuns {
    let base = phantom_config(0.45);
    PhantomRuns {
        both_30: pipeline(root, "both_30", &base, &["--solver", "both", "--compression-fraction", "0.3"]),
        implicit_10: pipeline(root, "implicit_10", &base, &["--solver", "implicit", "--compression-fraction", "0.1"]),
        implicit_20: pipeline(root, "implicit_20", &base, &["--solver", "implicit", "--compression-fraction", "0.2"]),
        implicit_30_nu049: pipeline(
            root,
            "implicit_30_nu049",
            &phantom_config(0.49),
            &["--solver", "implicit", "--compression-fraction", "0.3"],
        ),
    }
}

fn cross_solver(runs: &PhantomRuns) -> Outcome {
    let run = &runs.both_30;
    if run.code != 0 {
        return Err(format!("pipeline exit code {}", run.code));
    }
    let e = run.displacement("explicit");
    let i = run.displacement("implicit");
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in e.iter().zip(&i) {
        for k in 0..3 {
            num += (a[k] - b[k]).powi(2);
            den += b[k] * b[k];
        }
    }
    let rel = (num / den).sqrt();
    let m = run.manifest();
    let elements = import_vtk(&run.dir.join("mesh.vtk")).unwrap().mesh.num_elements();
    check(
        rel < 0.05 && run.secs < 600.0 && (10_000..=50_000).contains(&elements),
        format!(
            "{elements} tets, 30%: relative L2 {rel:.2e} (< 5%), pipeline {:.1} s (< 600 s), solver times {}",
            run.secs,
            m["solvers"]
                .as_array()
                .unwrap()
                .iter()
                .map(|s| format!("{} {:.1} s", s["solver"].as_str().unwrap(), s["wall_time_s"].as_f64().unwrap()))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

fn volume_band(runs: &PhantomRuns) -> Outcome {
    if runs.both_30.code != 0 || runs.implicit_30_nu049.code != 0 {
        return Err(format!(
            "pipeline exit codes {} (nu 0.45) and {} (nu 0.49)",
            runs.both_30.code, runs.implicit_30_nu049.code
        ));
    }
    let e = runs.both_30.report("explicit").bv_change_percent;
    let i = runs.both_30.report("implicit").bv_change_percent;
    let stiff = runs.implicit_30_nu049.report("implicit").bv_change_percent;
    check(
        e.abs() <= 5.0 && i.abs() <= 5.0 && stiff < i,
        format!("BV loss explicit {e:.2}%, implicit {i:.2}% (|.| <= 5%); nu 0.49 implicit {stiff:.2}% < {i:.2}%"),
    )
}

fn dice_trend(runs: &PhantomRuns) -> Outcome {
    let runs = [(10, &runs.implicit_10), (20, &runs.implicit_20), (30, &runs.both_30)];
    if let Some((p, r)) = runs.iter().find(|(_, r)| r.code != 0) {
        return Err(format!("{p}% run exit code {}", r.code));
    }
    let d: Vec<f64> = runs.iter().map(|(_, r)| r.report("implicit").fat_dice()).collect();
    check(
        d.iter().all(|&x| x < 1.0) && d[0] > d[1] && d[1] > d[2],
        format!("COM-aligned fat Dice at 10/20/30%: {:.4} > {:.4} > {:.4}", d[0], d[1], d[2]),
    )
}

// ---------------------------------------------------------------------------
// mesher

fn label_volumes(mesh: &TetMesh) -> BTreeMap<u8, f64> {
    let mut out = BTreeMap::new();
    for (e, t) in mesh.elements.iter().enumerate() {
        let x = t.map(|n| Vector3::from(mesh.nodes[n]));
        *out.entry(mesh.element_label[e]).or_insert(0.0) += (x[1] - x[0]).dot(&(x[2] - x[0]).cross(&(x[3] - x[0]))) / 6.0;
    }
    out
}

fn mesh_conservation() -> Outcome {
    let (vol, _) = generate_phantom(&PhantomSpec::default()).unwrap();
    let budget = ElementBudget::new(10_000, 50_000).unwrap();
    let mesh = mesh_from_labels(&vol, budget).unwrap();
    let cells = meshed_cell_volume(&vol, budget).unwrap();
    let counts = cells.counts();
    let mut worst: f64 = 0.0;
    for (label, v) in label_volumes(&mesh) {
        let expected = counts[label as usize] as f64 * cells.grid().voxel_volume();
        worst = worst.max((v - expected).abs() / expected);
    }
    let (big, _) = generate_phantom(&PhantomSpec::with_radius(60.0)).unwrap();
    let large = ElementBudget::new(50_000, 500_000).unwrap();
    let big_mesh = mesh_from_labels(&big, large).unwrap();
    let n = big_mesh.num_elements();
    let big_cells = meshed_cell_volume(&big, large).unwrap();
    let big_counts = big_cells.counts();
    let big_expected: f64 = [1, 2, 5].iter().map(|&l| big_counts[l] as f64).sum::<f64>() * big_cells.grid().voxel_volume();
    let big_total: f64 = label_volumes(&big_mesh).values().sum();
    let big_err = (big_total - big_expected).abs() / big_expected;
    check(
        worst <= 1e-9 && budget.contains(mesh.num_elements()) && large.contains(n) && big_err <= 1e-9,
        format!(
            "r=20: {} tets, per-label error {worst:.1e}; r=60: {n} tets in [50k, 500k], volume error {big_err:.1e}",
            mesh.num_elements()
        ),
    )
}

// ---------------------------------------------------------------------------
// metrics

const N: usize = 32;

fn random_labels(r: &mut ChaCha8Rng, g: Grid) -> LabelVolume {
    let data = (0..g.len())
        .map(|_| match r.gen_range(0..10) {
            0..=3 => 0,
            4..=6 => 1,
            7..=8 => 2,
            _ => r.gen_range(3..7),
        })
        .collect();
    LabelVolume::new(g, data).unwrap()
}

fn random_ticks(r: &mut ChaCha8Rng, g: Grid, nc: usize) -> (ProbabilityVolume, Vec<Vec<u32>>) {
    let mut ticks = vec![vec![0u32; g.len()]; nc];
    for v in 0..g.len() {
        let mut left = 64u32;
        for plane in ticks.iter_mut().take(nc - 1) {
            let t = r.gen_range(0..=left.min(40));
            plane[v] = t;
            left -= t;
        }
        ticks[nc - 1][v] = left;
    }
    let planes = ticks.iter().map(|p| p.iter().map(|&t| t as f32 / 64.0).collect()).collect();
    (ProbabilityVolume::new(g, planes).unwrap(), ticks)
}

fn metrics_oracles() -> Outcome {
    let g = Grid::new([N; 3], [1.0; 3], [0.0; 3]).unwrap();
    let mut r = rng(31);
    let trials = 100;
    let mut mismatches = Vec::new();
    for t in 0..trials {
        let a = random_labels(&mut r, g);
        let b = random_labels(&mut r, g);
        let got = dice_per_class(&a, &b, &[0, 1, 2, 3, 4, 5, 6]).unwrap();
        for c in 0..7u8 {
            let (mut na, mut nb, mut both) = (0u64, 0u64, 0u64);
            for (&x, &y) in a.data().iter().zip(b.data()) {
                na += (x == c) as u64;
                nb += (y == c) as u64;
                both += (x == c && y == c) as u64;
            }
            let expected = if na + nb == 0 { 1.0 } else { 2.0 * both as f64 / (na + nb) as f64 };
            if got[&c].dice != expected {
                mismatches.push(format!("dice trial {t} class {c}"));
            }
        }
        let fg = |v: &LabelVolume| v.data().iter().filter(|&&l| l == 1 || l == 2).count() as f64;
        if breast_volume_change(&a, &b).unwrap() != (fg(&a) - fg(&b)) / fg(&a) * 100.0 {
            mismatches.push(format!("bv trial {t}"));
        }

        let (pa, ta) = random_ticks(&mut r, g, 3);
        let (pb, tb) = random_ticks(&mut r, g, 3);
        let w = [1 + t % 3, 1 + (t / 3) % 2];
        let ens = ensemble_argmax(&[pa, pb], Some(&w.map(|x| x as f64))).unwrap();
        let bad = (0..g.len()).any(|v| {
            let score = |c: usize| w[0] as u32 * ta[c][v] + w[1] as u32 * tb[c][v];
            let best = (1..3).fold(0, |best, c| if score(c) > score(best) { c } else { best });
            ens.data()[v] != best as u8
        });
        if bad {
            mismatches.push(format!("ensemble trial {t}"));
        }

        let k = r.gen_range(1..9);
        let vals: Vec<f64> = (0..k).map(|_| r.gen()).collect();
        let reports: Vec<MetricsReport> = vals
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let d = ClassDice { dice: v, empty: false };
                MetricsReport {
                    case_id: i.to_string(),
                    solver: "implicit".into(),
                    dice: BTreeMap::from([(1, d)]),
                    com_dice: BTreeMap::from([(1, d), (2, d)]),
                    com_shift_voxels: [0; 3],
                    com_shift_mm: BTreeMap::new(),
                    voxel_spacing_mm: [1.0; 3],
                    bv_pre_mm3: 1.0,
                    bv_post_mm3: 1.0,
                    bv_change_percent: v,
                    converged: true,
                }
            })
            .collect();
        let row = &aggregate(&reports).unwrap()[0];
        let mut mean = 0.0;
        for v in &vals {
            mean += v;
        }
        mean /= k as f64;
        let mut ss = 0.0;
        for v in &vals {
            ss += (v - mean) * (v - mean);
        }
        let sd = (ss / k as f64).sqrt();
        if (row.fat.mean - mean).abs() > 1e-12 || (row.fat.sd - sd).abs() > 1e-12 || row.fat.n != k {
            mismatches.push(format!("aggregate trial {t}"));
        }
    }
    let table2 = mean_sd(&[0.91, 0.78, 0.85, 0.89]).unwrap();
    let t2_ok = (table2.mean - 0.85).abs() <= 0.01 && format!("{:.2}", table2.sd) == "0.05";
    check(
        mismatches.is_empty() && t2_ok,
        format!(
            "{trials} trials x (dice, BV, ensemble, aggregate) on 32^3: {} mismatches; fat {{0.91,0.78,0.85,0.89}} -> {:.4} ± {:.4}",
            mismatches.len(),
            table2.mean,
            table2.sd
        ),
    )
}

// ---------------------------------------------------------------------------
// failure paths

fn failure_paths(root: &Path) -> Outcome {
    let small = "[phantom]\nbreast_radius_mm = 10.0\ngland_semiaxes_mm = [4.0, 3.0, 3.0]\npectoral_thickness_mm = 2.0\n\
                 domain_dims_mm = [30.0, 30.0, 25.0]\n\n[mesh]\nelements_min = 2000\nelements_max = 5000\n\n";
    let cases = [
        ("unstable", "[solver]\nkind = \"explicit\"\n[solver.explicit]\ntime_step = 1e-2\n", "explicit", "dt instability"),
        (
            "starved",
            "[solver]\nkind = \"implicit\"\n[solver.implicit]\nload_steps = 1\nmax_newton_iters = 1\nmax_cutbacks = 0\n",
            "implicit",
            "divergence",
        ),
    ];
    let mut details = Vec::new();
    let mut ok = true;
    for (name, extra, solver, reason) in cases {
        let run = pipeline(root, name, &format!("{small}{extra}"), &[]);
        let m = run.manifest();
        let got = m["solvers"][0]["failure_reason"].as_str().unwrap_or("").to_string();
        let sim: Value =
            serde_json::from_str(&std::fs::read_to_string(run.dir.join(format!("simulation_{solver}.json"))).unwrap())
                .unwrap();
        let trace = sim["trace"].as_array().map_or(0, |t| t.len());
        ok &= run.code == 3 && m["status"] == "failed" && sim["status"] == "failed" && got.starts_with(reason) && trace > 0;
        details.push(format!("{solver}: exit {}, \"{}\", {trace} trace entries", run.code, got.split(':').next().unwrap_or("")));
    }
    check(ok, details.join("; "))
}

// ---------------------------------------------------------------------------

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut record = |name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        match &outcome {
            Ok(d) => println!("PASS  {name:<28} {d}"),
            Err(d) => println!("FAIL  {name:<28} {d}"),
        }
        results.push((name, outcome));
    };

    record("constitutive finite diff", &mut constitutive_fd);
    record("simple shear", &mut simple_shear);
    record("patch test", &mut patch_test);
    record("rigid-body invariance", &mut rigid_invariance);
    record("uniaxial validation", &mut uniaxial);
    let runs = phantom_runs(root);
    record("cross-solver agreement", &mut || cross_solver(&runs));
    record("volume plausibility", &mut || volume_band(&runs));
    record("compressed-map dice", &mut || dice_trend(&runs));
    record("mesh conservation", &mut mesh_conservation);
    record("metrics oracles", &mut metrics_oracles);
    record("failure-path contract", &mut || failure_paths(root));

    let failed = results.iter().filter(|(_, o)| o.is_err()).count();
    println!("{} of {} acceptance criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
