//! Labeled and probabilistic 3D volumes.
//!
//! Voxel `(i, j, k)` has its center at `origin + (i, j, k) * spacing` (mm) and
//! is stored at linear index `i + nx * (j + ny * k)`, x fastest. Both file
//! formats use the same layout.

mod io;
mod metaimage;
mod nifti;
mod phantom;
mod resample;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use io::{
    load_label_volume, load_mask, load_probability_volume, load_volume, save_label_volume,
    save_mask, save_probability_volume, LoadedVolume, VolumeFormat, VolumeKind,
};
pub use phantom::{generate_phantom, PhantomSpec};
pub use resample::{resample_isotropic, resample_probability_isotropic};

/// Number of tissue classes, background included.
pub const NUM_CLASSES: usize = 7;

/// Tissue codes stored in label volumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Tissue {
    Background = 0,
    Fat = 1,
    Gland = 2,
    Heart = 3,
    Lung = 4,
    Pectoral = 5,
    Thorax = 6,
}

impl Tissue {
    pub const ALL: [Tissue; NUM_CLASSES] = [
        Tissue::Background,
        Tissue::Fat,
        Tissue::Gland,
        Tissue::Heart,
        Tissue::Lung,
        Tissue::Pectoral,
        Tissue::Thorax,
    ];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Tissue> {
        Tissue::ALL.get(code as usize).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Tissue::Background => "background",
            Tissue::Fat => "fat",
            Tissue::Gland => "gland",
            Tissue::Heart => "heart",
            Tissue::Lung => "lung",
            Tissue::Pectoral => "pectoral",
            Tissue::Thorax => "thorax",
        }
    }

    /// Breast tissue proper: what the breast-volume metric counts.
    pub fn is_breast(self) -> bool {
        matches!(self, Tissue::Fat | Tissue::Gland)
    }
}

impl fmt::Display for Tissue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Error)]
pub enum VolumeError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid header: {0}")]
    Header(String),
    #[error("payload size mismatch: expected {expected} bytes, found {found}")]
    PayloadSize { expected: usize, found: usize },
    #[error("label {value} at voxel {index} is outside 0..=6")]
    LabelOutOfRange { index: usize, value: f64 },
    #[error("mask value {value} at voxel {index} is not 0 or 1")]
    MaskValue { index: usize, value: u8 },
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("invalid volume: {0}")]
    Invalid(String),
    #[error("invalid phantom: {0}")]
    Phantom(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
}

/// Geometry of a voxel grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub dims: [usize; 3],
    pub spacing: [f64; 3],
    pub origin: [f64; 3],
}

impl Grid {
    pub fn new(dims: [usize; 3], spacing: [f64; 3], origin: [f64; 3]) -> Result<Self, VolumeError> {
        if dims.contains(&0) {
            return Err(VolumeError::Invalid(format!("dims must be positive, got {dims:?}")));
        }
        if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(VolumeError::Invalid(format!(
                "spacing must be positive, got {spacing:?}"
            )));
        }
        if origin.iter().any(|o| !o.is_finite()) {
            return Err(VolumeError::Invalid(format!("origin not finite: {origin:?}")));
        }
        Ok(Grid { dims, spacing, origin })
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.dims[0] * (j + self.dims[1] * k)
    }

    #[inline]
    pub fn ijk(&self, index: usize) -> [usize; 3] {
        let i = index % self.dims[0];
        let rest = index / self.dims[0];
        [i, rest % self.dims[1], rest / self.dims[1]]
    }

    /// Physical center of voxel `ijk` (mm).
    #[inline]
    pub fn center(&self, ijk: [usize; 3]) -> [f64; 3] {
        [
            self.origin[0] + ijk[0] as f64 * self.spacing[0],
            self.origin[1] + ijk[1] as f64 * self.spacing[1],
            self.origin[2] + ijk[2] as f64 * self.spacing[2],
        ]
    }

    pub fn voxel_volume(&self) -> f64 {
        self.spacing.iter().product()
    }

    /// Lower physical boundary (outer face of the first voxel).
    pub fn lower_bound(&self) -> [f64; 3] {
        std::array::from_fn(|a| self.origin[a] - 0.5 * self.spacing[a])
    }

    /// Upper physical boundary (outer face of the last voxel).
    pub fn upper_bound(&self) -> [f64; 3] {
        std::array::from_fn(|a| {
            self.origin[a] + (self.dims[a] as f64 - 0.5) * self.spacing[a]
        })
    }

    pub fn is_isotropic(&self, rel_tol: f64) -> bool {
        let s = self.spacing[0];
        self.spacing.iter().all(|&t| (t - s).abs() <= rel_tol * s)
    }

    /// Equality up to a relative tolerance on spacing and an absolute one on
    /// origin scaled by spacing.
    pub fn matches(&self, other: &Grid) -> bool {
        const TOL: f64 = 1e-6;
        self.dims == other.dims
            && (0..3).all(|a| {
                (self.spacing[a] - other.spacing[a]).abs() <= TOL * self.spacing[a]
                    && (self.origin[a] - other.origin[a]).abs() <= TOL * self.spacing[a]
            })
    }

    pub fn same_spacing(&self, other: &Grid) -> bool {
        (0..3).all(|a| (self.spacing[a] - other.spacing[a]).abs() <= 1e-6 * self.spacing[a])
    }

    fn check_matches(&self, other: &Grid, what: &str) -> Result<(), VolumeError> {
        if self.matches(other) {
            Ok(())
        } else {
            Err(VolumeError::GridMismatch(format!(
                "{what}: {:?}/{:?}/{:?} vs {:?}/{:?}/{:?}",
                self.dims, self.spacing, self.origin, other.dims, other.spacing, other.origin
            )))
        }
    }
}

/// One tissue code per voxel.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    grid: Grid,
    data: Vec<u8>,
}

impl LabelVolume {
    pub fn new(grid: Grid, data: Vec<u8>) -> Result<Self, VolumeError> {
        if data.len() != grid.len() {
            return Err(VolumeError::PayloadSize {
                expected: grid.len(),
                found: data.len(),
            });
        }
        if let Some((index, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, &v)| v as usize >= NUM_CLASSES)
        {
            return Err(VolumeError::LabelOutOfRange {
                index,
                value: value as f64,
            });
        }
        Ok(LabelVolume { grid, data })
    }

    pub fn filled(grid: Grid, label: Tissue) -> Self {
        LabelVolume {
            data: vec![label.code(); grid.len()],
            grid,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> u8 {
        self.data[self.grid.index(i, j, k)]
    }

    /// Sets one voxel. Codes outside `0..=6` are rejected.
    pub fn set(&mut self, i: usize, j: usize, k: usize, label: u8) -> Result<(), VolumeError> {
        if label as usize >= NUM_CLASSES {
            return Err(VolumeError::LabelOutOfRange {
                index: self.grid.index(i, j, k),
                value: label as f64,
            });
        }
        let idx = self.grid.index(i, j, k);
        self.data[idx] = label;
        Ok(())
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    /// Voxel count per tissue code.
    pub fn counts(&self) -> [usize; NUM_CLASSES] {
        let mut counts = [0usize; NUM_CLASSES];
        for &v in &self.data {
            counts[v as usize] += 1;
        }
        counts
    }

    /// Physical volume (mm³) of one tissue class.
    pub fn class_volume_mm3(&self, label: Tissue) -> f64 {
        self.counts()[label as usize] as f64 * self.grid.voxel_volume()
    }

    pub fn label_set(&self) -> Vec<u8> {
        self.counts()
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(l, _)| l as u8)
            .collect()
    }
}

/// Binary region-of-interest mask on the same grid as a label volume.
#[derive(Debug, Clone, PartialEq)]
pub struct BreastMask {
    grid: Grid,
    data: Vec<u8>,
}

impl BreastMask {
    pub fn new(grid: Grid, data: Vec<u8>) -> Result<Self, VolumeError> {
        if data.len() != grid.len() {
            return Err(VolumeError::PayloadSize {
                expected: grid.len(),
                found: data.len(),
            });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, &v)| v > 1) {
            return Err(VolumeError::MaskValue { index, value });
        }
        Ok(BreastMask { grid, data })
    }

    pub fn filled(grid: Grid, value: bool) -> Self {
        BreastMask {
            data: vec![value as u8; grid.len()],
            grid,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }
}

/// Per-class probability maps (softmax output), `classes` grids of `f32`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    grid: Grid,
    classes: Vec<Vec<f32>>,
}

/// Allowed deviation of the per-voxel class sum from one.
pub const PROBABILITY_SUM_TOL: f32 = 1e-4;

impl ProbabilityVolume {
    pub fn new(grid: Grid, classes: Vec<Vec<f32>>) -> Result<Self, VolumeError> {
        if classes.is_empty() {
            return Err(VolumeError::Invalid("probability volume needs at least one class".into()));
        }
        for (c, plane) in classes.iter().enumerate() {
            if plane.len() != grid.len() {
                return Err(VolumeError::PayloadSize {
                    expected: grid.len(),
                    found: plane.len(),
                });
            }
            if let Some(idx) = plane.iter().position(|p| !(0.0..=1.0).contains(p)) {
                return Err(VolumeError::Invalid(format!(
                    "class {c} probability {} at voxel {idx} outside [0,1]",
                    plane[idx]
                )));
            }
        }
        for v in 0..grid.len() {
            let sum: f32 = classes.iter().map(|plane| plane[v]).sum();
            if (sum - 1.0).abs() > PROBABILITY_SUM_TOL {
                return Err(VolumeError::Invalid(format!(
                    "class probabilities at voxel {v} sum to {sum}"
                )));
            }
        }
        Ok(ProbabilityVolume { grid, classes })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class(&self, c: usize) -> &[f32] {
        &self.classes[c]
    }

    pub fn classes(&self) -> &[Vec<f32>] {
        &self.classes
    }

    /// Hard one-hot volume from a label map.
    pub fn one_hot(labels: &LabelVolume, num_classes: usize) -> Result<Self, VolumeError> {
        let grid = *labels.grid();
        let mut classes = vec![vec![0.0f32; grid.len()]; num_classes];
        for (v, &l) in labels.data().iter().enumerate() {
            let l = l as usize;
            if l >= num_classes {
                return Err(VolumeError::LabelOutOfRange {
                    index: v,
                    value: l as f64,
                });
            }
            classes[l][v] = 1.0;
        }
        ProbabilityVolume::new(grid, classes)
    }
}

/// Zeroes every voxel outside the mask; voxels inside keep their label.
pub fn apply_breast_mask(vol: &LabelVolume, mask: &BreastMask) -> Result<LabelVolume, VolumeError> {
    vol.grid.check_matches(&mask.grid, "mask and volume")?;
    let data = vol
        .data
        .iter()
        .zip(&mask.data)
        .map(|(&l, &m)| if m == 1 { l } else { 0 })
        .collect();
    Ok(LabelVolume { grid: vol.grid, data })
}
