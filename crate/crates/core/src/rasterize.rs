//! Deformed tetrahedral mesh back to a label volume.
//!
//! Every voxel center that falls inside a deformed tet (faces inclusive)
//! takes that tet's label. Where tets overlap, the tet whose barycentric
//! coordinates lie closest to its centroid `(1/4, 1/4, 1/4, 1/4)` wins, and
//! the lower label breaks exact ties, so the result does not depend on
//! element order.

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::mesher::{tet_signed_volume, TetMesh};
use crate::volume::{Grid, LabelVolume, VolumeError};

/// Barycentric tolerance for the inclusive inside test.
pub const BARYCENTRIC_EPS: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("degenerate tetrahedron (signed volume {0:e})")]
    Degenerate(f64),
    #[error("displacement has {found} entries for {expected} nodes")]
    Length { expected: usize, found: usize },
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Reference mesh plus nodal displacement (mm).
#[derive(Debug, Clone, PartialEq)]
pub struct DeformedMesh {
    pub mesh: TetMesh,
    pub displacement: Vec<[f64; 3]>,
}

impl DeformedMesh {
    pub fn new(mesh: TetMesh, displacement: Vec<[f64; 3]>) -> Result<Self, RasterError> {
        if displacement.len() != mesh.num_nodes() {
            return Err(RasterError::Length {
                expected: mesh.num_nodes(),
                found: displacement.len(),
            });
        }
        Ok(DeformedMesh { mesh, displacement })
    }

    pub fn undeformed(mesh: TetMesh) -> Self {
        let n = mesh.num_nodes();
        DeformedMesh {
            mesh,
            displacement: vec![[0.0; 3]; n],
        }
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.mesh
            .nodes
            .iter()
            .zip(&self.displacement)
            .map(|(x, u)| [x[0] + u[0], x[1] + u[1], x[2] + u[2]])
            .collect()
    }

    pub fn deformed_tet(&self, positions: &[[f64; 3]], e: usize) -> [[f64; 3]; 4] {
        self.mesh.elements[e].map(|n| positions[n])
    }

    /// Elements with non-positive deformed volume.
    pub fn inverted_elements(&self) -> Vec<usize> {
        let pos = self.positions();
        (0..self.mesh.num_elements())
            .filter(|&e| !(tet_signed_volume(&self.deformed_tet(&pos, e)) > 0.0))
            .collect()
    }

    /// Deformed volume (mm³), optionally restricted to some labels.
    pub fn volume(&self, labels: Option<&[u8]>) -> f64 {
        let pos = self.positions();
        (0..self.mesh.num_elements())
            .filter(|&e| labels.is_none_or(|l| l.contains(&self.mesh.element_label[e])))
            .map(|e| tet_signed_volume(&self.deformed_tet(&pos, e)))
            .sum()
    }

    /// Axis-aligned bounds of the deformed nodes used by elements.
    pub fn bounding_box(&self) -> Option<([f64; 3], [f64; 3])> {
        let pos = self.positions();
        let mut used = vec![false; pos.len()];
        for t in &self.mesh.elements {
            for &n in t {
                used[n] = true;
            }
        }
        let mut lo = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        let mut any = false;
        for (p, _) in pos.iter().zip(&used).filter(|(_, &u)| u) {
            any = true;
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        any.then_some((lo, hi))
    }
}

/// Barycentric coordinates of `p` if it lies inside `tet` (faces inclusive).
pub fn point_in_tet(p: [f64; 3], tet: &[[f64; 3]; 4]) -> Result<Option<[f64; 4]>, RasterError> {
    let v = tet.map(|x| Vector3::new(x[0], x[1], x[2]));
    let t = Matrix3::from_columns(&[v[1] - v[0], v[2] - v[0], v[3] - v[0]]);
    let det = t.determinant();
    let scale = (v[1] - v[0]).norm().max((v[2] - v[0]).norm()).max((v[3] - v[0]).norm());
    if !(det.abs() > 1e-12 * scale.powi(3)) {
        return Err(RasterError::Degenerate(det / 6.0));
    }
    let inv = t.try_inverse().ok_or(RasterError::Degenerate(det / 6.0))?;
    Ok(barycentric_inside(&inv, &v[0], p))
}

fn barycentric_inside(inv: &Matrix3<f64>, v0: &Vector3<f64>, p: [f64; 3]) -> Option<[f64; 4]> {
    let l = inv * (Vector3::new(p[0], p[1], p[2]) - v0);
    let b = [1.0 - l[0] - l[1] - l[2], l[0], l[1], l[2]];
    let ok = b
        .iter()
        .all(|&x| (-BARYCENTRIC_EPS..=1.0 + BARYCENTRIC_EPS).contains(&x));
    ok.then_some(b)
}

fn centroid_distance(b: &[f64; 4]) -> f64 {
    b.iter().map(|x| (x - 0.25) * (x - 0.25)).sum::<f64>().sqrt()
}

/// Voxel index range `[lo, hi)` along one axis whose centers lie in `[a, b]`.
fn index_range(a: f64, b: f64, origin: f64, spacing: f64, n: usize) -> (usize, usize) {
    let lo = ((a - origin) / spacing - BARYCENTRIC_EPS).ceil().max(0.0);
    let hi = ((b - origin) / spacing + BARYCENTRIC_EPS).floor() + 1.0;
    let hi = hi.min(n as f64).max(0.0);
    if lo >= hi {
        (0, 0)
    } else {
        (lo as usize, hi as usize)
    }
}

/// Rasterizes the deformed mesh onto `grid`. Parts of the mesh outside the
/// grid are dropped; degenerate or inverted deformed tets are skipped.
pub fn rasterize_mesh(dmesh: &DeformedMesh, grid: &Grid) -> Result<LabelVolume, RasterError> {
    let pos = dmesh.positions();
    let mesh = &dmesh.mesh;
    // (voxel, distance to centroid, label)
    let candidates: Vec<Vec<(usize, f64, u8)>> = (0..mesh.num_elements())
        .into_par_iter()
        .map(|e| {
            let tet = dmesh.deformed_tet(&pos, e);
            let v = tet.map(|x| Vector3::new(x[0], x[1], x[2]));
            let t = Matrix3::from_columns(&[v[1] - v[0], v[2] - v[0], v[3] - v[0]]);
            let Some(inv) = (t.determinant() > 0.0).then(|| t.try_inverse()).flatten() else {
                return Vec::new();
            };
            let mut ranges = [(0usize, 0usize); 3];
            for a in 0..3 {
                let lo = tet.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min);
                let hi = tet.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max);
                ranges[a] = index_range(lo, hi, grid.origin[a], grid.spacing[a], grid.dims[a]);
            }
            let label = mesh.element_label[e];
            let mut out = Vec::new();
            for k in ranges[2].0..ranges[2].1 {
                for j in ranges[1].0..ranges[1].1 {
                    for i in ranges[0].0..ranges[0].1 {
                        if let Some(b) = barycentric_inside(&inv, &v[0], grid.center([i, j, k])) {
                            out.push((grid.index(i, j, k), centroid_distance(&b), label));
                        }
                    }
                }
            }
            out
        })
        .collect();

    let mut best: Vec<(f64, u8)> = vec![(f64::INFINITY, 0); grid.len()];
    for (idx, d, label) in candidates.into_iter().flatten() {
        let cur = &mut best[idx];
        if d < cur.0 || (d == cur.0 && label < cur.1) {
            *cur = (d, label);
        }
    }
    let data = best.into_iter().map(|(_, l)| l).collect();
    Ok(LabelVolume::new(*grid, data)?)
}

/// Smallest extension of `template` (same spacing, lattice-aligned) whose
/// voxel centers include every center inside the given boxes.
pub fn covering_grid(template: &Grid, boxes: &[([f64; 3], [f64; 3])]) -> Result<Grid, VolumeError> {
    let mut lo_idx = [0i64; 3];
    let mut hi_idx = [0i64; 3];
    for a in 0..3 {
        lo_idx[a] = 0;
        hi_idx[a] = template.dims[a] as i64 - 1;
        for (lo, hi) in boxes {
            let l = ((lo[a] - template.origin[a]) / template.spacing[a]).ceil() as i64;
            let h = ((hi[a] - template.origin[a]) / template.spacing[a]).floor() as i64;
            lo_idx[a] = lo_idx[a].min(l);
            hi_idx[a] = hi_idx[a].max(h);
        }
    }
    let dims = std::array::from_fn(|a| (hi_idx[a] - lo_idx[a] + 1) as usize);
    let origin = std::array::from_fn(|a| template.origin[a] + lo_idx[a] as f64 * template.spacing[a]);
    Grid::new(dims, template.spacing, origin)
}
