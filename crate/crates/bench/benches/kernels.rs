use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use mammofem_core::fem::FemModel;
use mammofem_core::mesher::{mesh_from_labels, ElementBudget, TetMesh};
use mammofem_core::metrics::{com_aligned_dice, dice_per_class};
use mammofem_core::rasterize::rasterize_mesh;
use mammofem_core::volume::{generate_phantom, LabelVolume, PhantomSpec};
use mammofem_core::{DeformedMesh, Material, MaterialTable};
use nalgebra::Matrix3;

fn phantom(radius_mm: f64) -> (LabelVolume, TetMesh) {
    let (vol, _) = generate_phantom(&PhantomSpec::with_radius(radius_mm)).unwrap();
    let mesh = mesh_from_labels(&vol, ElementBudget::new(1, usize::MAX).unwrap()).unwrap();
    (vol, mesh)
}

/// Smooth displacement (m) squeezing y by 10% about the mesh center.
fn squeeze(model: &FemModel) -> Vec<f64> {
    let n = model.num_nodes();
    let cy = model.reference.iter().map(|x| x[1]).sum::<f64>() / n as f64;
    let mut u = vec![0.0; 3 * n];
    for (i, x) in model.reference.iter().enumerate() {
        u[3 * i + 1] = -0.1 * (x[1] - cy);
        u[3 * i] = 0.02 * (x[1] - cy);
    }
    u
}

fn material(c: &mut Criterion) {
    let m = Material::gland(0.45).unwrap();
    let f = Matrix3::new(1.05, 0.02, 0.0, -0.01, 0.93, 0.03, 0.0, 0.01, 1.02);
    c.bench_function("pk1_stress", |b| b.iter(|| m.pk1_stress(black_box(&f)).unwrap()));
    c.bench_function("stress_and_tangent", |b| b.iter(|| m.stress_and_tangent(black_box(&f)).unwrap()));
}

fn assembly(c: &mut Criterion) {
    let table = MaterialTable::breast_defaults(0.45).unwrap();
    let mut group = c.benchmark_group("assembly");
    group.sample_size(20);
    for r in [10.0, 20.0] {
        let (_, mesh) = phantom(r);
        let model = FemModel::new(&mesh, &table).unwrap();
        let u = squeeze(&model);
        let id = format!("{}tets", mesh.num_elements());
        group.bench_with_input(BenchmarkId::new("internal_forces", &id), &u, |b, u| {
            b.iter(|| model.internal_forces(u).unwrap())
        });
        let mut k = model.tangent_pattern();
        group.bench_with_input(BenchmarkId::new("tangent", &id), &u, |b, u| {
            b.iter(|| model.assemble_tangent_into(u, &mut k).unwrap())
        });
    }
    group.finish();
}

fn raster_and_metrics(c: &mut Criterion) {
    let (vol, mesh) = phantom(20.0);
    let table = MaterialTable::breast_defaults(0.45).unwrap();
    let model = FemModel::new(&mesh, &table).unwrap();
    let u = squeeze(&model);
    let disp = u.chunks(3).map(|d| [d[0] / 1e-3, d[1] / 1e-3, d[2] / 1e-3]).collect();
    let deformed = DeformedMesh::new(mesh.clone(), disp).unwrap();
    let grid = *vol.grid();

    let mut group = c.benchmark_group("rasterize");
    group.sample_size(20);
    group.bench_function("phantom_r20", |b| b.iter(|| rasterize_mesh(black_box(&deformed), &grid).unwrap()));
    group.finish();

    let pre = rasterize_mesh(&DeformedMesh::undeformed(mesh), &grid).unwrap();
    let post = rasterize_mesh(&deformed, &grid).unwrap();
    c.bench_function("dice_per_class", |b| b.iter(|| dice_per_class(&pre, &post, &[1, 2]).unwrap()));
    c.bench_function("com_aligned_dice", |b| b.iter(|| com_aligned_dice(&pre, &post, &[1, 2]).unwrap()));
}

criterion_group!(benches, material, assembly, raster_and_metrics);
criterion_main!(benches);
