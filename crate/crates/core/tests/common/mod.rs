#![allow(dead_code)]

use mammofem_core::mesher::{mesh_from_labels, ElementBudget, TetMesh};
use mammofem_core::volume::{Grid, LabelVolume, Tissue};
use nalgebra::{Matrix4, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn block_volume(dims: [usize; 3], label: Tissue) -> LabelVolume {
    LabelVolume::filled(Grid::new(dims, [1.0; 3], [0.5; 3]).unwrap(), label)
}

/// Structured 1 mm mesh of a solid block: `6 * dims` tets.
pub fn block_mesh(dims: [usize; 3], label: Tissue) -> TetMesh {
    let vol = block_volume(dims, label);
    mesh_from_labels(&vol, ElementBudget::new(1, usize::MAX).unwrap()).unwrap()
}

/// Moves every node by up to `amount` mm per axis.
pub fn jitter(mesh: &TetMesh, amount: f64, seed: u64) -> TetMesh {
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

/// Shape-function gradients by inverting the 4x4 interpolation matrix
/// `[1 x y z]`, independent of the library's edge-matrix route.
pub fn gradients_by_interpolation(x: &[[f64; 3]; 4]) -> ([Vector3<f64>; 4], f64) {
    let m = Matrix4::from_fn(|r, c| if c == 0 { 1.0 } else { x[r][c - 1] });
    let inv = m.try_inverse().unwrap();
    let grads = std::array::from_fn(|a| Vector3::new(inv[(1, a)], inv[(2, a)], inv[(3, a)]));
    (grads, m.determinant() / 6.0)
}

/// Tet volume from the scalar triple product (same units as `x`).
pub fn triple_volume(x: &[[f64; 3]; 4]) -> f64 {
    let d = |i: usize| Vector3::new(x[i][0] - x[0][0], x[i][1] - x[0][1], x[i][2] - x[0][2]);
    d(1).dot(&d(2).cross(&d(3))) / 6.0
}

pub fn to_metres(p: [f64; 3]) -> [f64; 3] {
    p.map(|c| c * 1e-3)
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Proptest settings for integration tests: no regression files.
pub fn proptest_config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        failure_persistence: None,
        ..proptest::test_runner::Config::default()
    }
}
