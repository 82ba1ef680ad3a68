//! Soft-tissue compression toolkit.
//!
//! The pipeline runs from a labeled breast volume to a compressed label map:
//!
//! 1. [`volume`]: load/save MetaImage and NIfTI-1 volumes, mask, resample,
//!    and generate synthetic phantoms.
//! 2. [`mesher`]: structured 6-tetrahedra-per-cell meshing with an element
//!    budget, quality report, and legacy VTK export.
//! 3. [`material`]: compressible Neo-Hookean tissue model.
//! 4. [`fem`]: linear-tetrahedron kinematics and global assembly.
//! 5. [`solvers`]: explicit dynamic relaxation and implicit Newton solvers
//!    with rigid-plate penalty contact.
//! 6. [`rasterize`]: deformed mesh back to a label volume.
//! 7. [`metrics`]: Dice, center-of-mass aligned Dice, breast-volume change,
//!    softmax ensembling and mean/SD aggregation.

pub mod fem;
pub mod material;
pub mod mesher;
pub mod metrics;
pub mod rasterize;
pub mod solvers;
pub mod volume;

pub use fem::{FemError, FemModel};
pub use material::{Material, MaterialError, MaterialTable};
pub use mesher::{ElementBudget, MeshError, MeshQualityReport, NodeTag, TetMesh};
pub use metrics::{MetricsError, MetricsReport};
pub use rasterize::DeformedMesh;
pub use solvers::{
    Axis, CompressionSetup, ExplicitParams, ImplicitParams, SimulationResult, SolveStatus,
};
pub use volume::{
    BreastMask, Grid, LabelVolume, PhantomSpec, ProbabilityVolume, Tissue, VolumeError,
};

/// Millimetres to metres.
pub const MM: f64 = 1e-3;
