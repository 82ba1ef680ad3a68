//! Structured tetrahedral meshing of label volumes.
//!
//! The volume is covered by cubic cells of pitch `p` (a multiple of the voxel
//! pitch, not necessarily an integer one). A cell takes the majority label of
//! the voxels whose centers fall inside it, ties going to the lower code, and
//! labels other than fat, gland and pectoral count as background. Every
//! occupied cell is split into the six Kuhn tetrahedra sharing its main
//! diagonal; the split is translation invariant, so neighbouring cells agree
//! on their shared face diagonals.
//!
//! The chest wall is the low-z side. Nodes at or below the posterior plane
//! (top of the pectoral cells, or the lowest occupied face without pectoral)
//! are tagged [`NodeTag::FixedPosterior`].

mod quality;
mod vtk;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::volume::{LabelVolume, Tissue};

pub use quality::{dihedral_angles, quality_report, tet_signed_volume, MeshQualityReport};
pub use vtk::{export_vtk, export_vtk_with_displacement, import_vtk, VtkMesh};

/// Axis normal to the chest wall.
pub const POSTERIOR_AXIS: usize = 2;

/// Labels that become elements.
pub const MESHED_LABELS: [u8; 3] = [1, 2, 5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeTag {
    Free,
    FixedPosterior,
}

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("no meshable voxels (fat, gland or pectoral) in volume")]
    Empty,
    #[error("volume spacing {0:?} is not isotropic")]
    NotIsotropic([f64; 3]),
    #[error("invalid element budget {min}..={max}")]
    Budget { min: usize, max: usize },
    #[error("element budget {min}..={max} unreachable; closest achievable counts: below {below:?}, above {above:?}")]
    Unreachable {
        min: usize,
        max: usize,
        below: Option<usize>,
        above: Option<usize>,
    },
    #[error("element {element}: {reason}")]
    InvalidElement { element: usize, reason: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("VTK parse error: {0}")]
    Parse(String),
}

/// Inclusive element-count range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ElementBudget {
    pub min: usize,
    pub max: usize,
}

impl ElementBudget {
    pub fn new(min: usize, max: usize) -> Result<Self, MeshError> {
        if min > max || max == 0 {
            return Err(MeshError::Budget { min, max });
        }
        Ok(ElementBudget { min, max })
    }

    pub fn contains(&self, n: usize) -> bool {
        (self.min..=self.max).contains(&n)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TetMesh {
    /// Node coordinates (mm).
    pub nodes: Vec<[f64; 3]>,
    pub elements: Vec<[usize; 4]>,
    pub element_label: Vec<u8>,
    pub boundary_tags: Vec<NodeTag>,
}

impl TetMesh {
    /// Builds a mesh and checks its invariants.
    pub fn new(
        nodes: Vec<[f64; 3]>,
        elements: Vec<[usize; 4]>,
        element_label: Vec<u8>,
        boundary_tags: Vec<NodeTag>,
    ) -> Result<Self, MeshError> {
        let mesh = TetMesh {
            nodes,
            elements,
            element_label,
            boundary_tags,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let bad = |element: usize, reason: String| Err(MeshError::InvalidElement { element, reason });
        if self.element_label.len() != self.elements.len() {
            return bad(0, "label count differs from element count".into());
        }
        if self.boundary_tags.len() != self.nodes.len() {
            return bad(0, "tag count differs from node count".into());
        }
        for (e, tet) in self.elements.iter().enumerate() {
            if tet.iter().any(|&n| n >= self.nodes.len()) {
                return bad(e, format!("node index out of range in {tet:?}"));
            }
            if !MESHED_LABELS.contains(&self.element_label[e]) {
                return bad(e, format!("label {} is not meshable", self.element_label[e]));
            }
            let v = tet_signed_volume(&self.tet_coords(e));
            if !(v > 0.0) {
                return bad(e, format!("non-positive signed volume {v}"));
            }
        }
        Ok(())
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn tet_coords(&self, e: usize) -> [[f64; 3]; 4] {
        self.elements[e].map(|n| self.nodes[n])
    }

    /// Total mesh volume (mm³).
    pub fn volume(&self) -> f64 {
        (0..self.elements.len())
            .map(|e| tet_signed_volume(&self.tet_coords(e)))
            .sum()
    }

    pub fn fixed_nodes(&self) -> impl Iterator<Item = usize> + '_ {
        self.boundary_tags
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == NodeTag::FixedPosterior)
            .map(|(i, _)| i)
    }
}

/// Cell occupancy at a given pitch.
struct CellGrid {
    dims: [usize; 3],
    lower: [f64; 3],
    pitch: f64,
    labels: Vec<u8>,
}

impl CellGrid {
    fn index(&self, c: [usize; 3]) -> usize {
        c[0] + self.dims[0] * (c[1] + self.dims[1] * c[2])
    }

    fn occupied(&self) -> usize {
        self.labels.iter().filter(|&&l| l != 0).count()
    }
}

fn slot(label: u8) -> usize {
    match label {
        1 => 1,
        2 => 2,
        5 => 3,
        _ => 0,
    }
}

const SLOT_LABEL: [u8; 4] = [0, 1, 2, 5];

fn classify(vol: &LabelVolume, pitch: f64) -> CellGrid {
    let grid = vol.grid();
    let v = grid.spacing[0];
    let lower = grid.lower_bound();
    let cell_of: [Vec<usize>; 3] = std::array::from_fn(|a| {
        (0..grid.dims[a])
            .map(|i| (((i as f64 + 0.5) * v) / pitch).floor() as usize)
            .collect()
    });
    let dims: [usize; 3] = std::array::from_fn(|a| cell_of[a].last().map_or(0, |&c| c + 1));
    let mut counts = vec![[0u32; 4]; dims[0] * dims[1] * dims[2]];
    for k in 0..grid.dims[2] {
        for j in 0..grid.dims[1] {
            let row = dims[0] * (cell_of[1][j] + dims[1] * cell_of[2][k]);
            for i in 0..grid.dims[0] {
                counts[row + cell_of[0][i]][slot(vol.get(i, j, k))] += 1;
            }
        }
    }
    let labels = counts
        .iter()
        .map(|c| {
            let mut best = 0;
            for s in 1..4 {
                if c[s] > c[best] {
                    best = s;
                }
            }
            SLOT_LABEL[best]
        })
        .collect();
    CellGrid {
        dims,
        lower,
        pitch,
        labels,
    }
}

/// Picks the cell pitch for the budget: the smallest integer multiple of the
/// voxel pitch whose element count fits, refined by fractional multiples when
/// consecutive integers straddle the range.
fn select_cells(vol: &LabelVolume, budget: ElementBudget) -> Result<CellGrid, MeshError> {
    const FRACTIONAL_STEPS: usize = 32;
    let v = vol.grid().spacing[0];
    let max_factor = *vol.grid().dims.iter().max().unwrap_or(&1);
    let first = classify(vol, v);
    let n1 = 6 * first.occupied();
    if n1 == 0 {
        return Err(MeshError::Empty);
    }
    if budget.contains(n1) {
        return Ok(first);
    }
    if n1 < budget.min {
        return Err(MeshError::Unreachable {
            min: budget.min,
            max: budget.max,
            below: Some(n1),
            above: None,
        });
    }
    let mut above = n1;
    for k in 2..=max_factor {
        let cells = classify(vol, k as f64 * v);
        let n = 6 * cells.occupied();
        if budget.contains(n) {
            return Ok(cells);
        }
        if n < budget.min {
            let mut below = n;
            for step in 1..FRACTIONAL_STEPS {
                let factor = (k - 1) as f64 + step as f64 / FRACTIONAL_STEPS as f64;
                let cells = classify(vol, factor * v);
                let n = 6 * cells.occupied();
                if budget.contains(n) {
                    return Ok(cells);
                }
                if n > budget.max {
                    above = above.min(n);
                } else if n > 0 {
                    below = below.max(n);
                }
            }
            return Err(MeshError::Unreachable {
                min: budget.min,
                max: budget.max,
                below: (below > 0).then_some(below),
                above: Some(above),
            });
        }
        above = n;
    }
    Err(MeshError::Unreachable {
        min: budget.min,
        max: budget.max,
        below: None,
        above: Some(above),
    })
}

/// Kuhn split of the unit cube: corner `c` has offsets `(c & 1, c >> 1 & 1, c >> 2 & 1)`.
/// Each tet walks from corner 0 to corner 7 along one axis permutation.
pub(crate) const KUHN_TETS: [[usize; 4]; 6] = [
    [0, 1, 3, 7], // x, y, z
    [0, 1, 5, 7], // x, z, y
    [0, 2, 3, 7], // y, x, z
    [0, 2, 6, 7], // y, z, x
    [0, 4, 5, 7], // z, x, y
    [0, 4, 6, 7], // z, y, x
];

fn kuhn_tets_oriented() -> [[usize; 4]; 6] {
    let corner = |c: usize| [(c & 1) as f64, ((c >> 1) & 1) as f64, ((c >> 2) & 1) as f64];
    KUHN_TETS.map(|t| {
        let v = tet_signed_volume(&t.map(corner));
        if v < 0.0 {
            [t[0], t[2], t[1], t[3]]
        } else {
            t
        }
    })
}

/// Structured mesh of the fat, gland and pectoral voxels within the budget.
pub fn mesh_from_labels(vol: &LabelVolume, budget: ElementBudget) -> Result<TetMesh, MeshError> {
    let grid = vol.grid();
    if !grid.is_isotropic(1e-6) {
        return Err(MeshError::NotIsotropic(grid.spacing));
    }
    let cells = select_cells(vol, budget)?;
    Ok(build_mesh(&cells))
}

fn build_mesh(cells: &CellGrid) -> TetMesh {
    let cd = cells.dims;
    let nd = [cd[0] + 1, cd[1] + 1, cd[2] + 1];
    let node_index = |i: usize, j: usize, k: usize| i + nd[0] * (j + nd[1] * k);
    let mut node_id = vec![u32::MAX; nd[0] * nd[1] * nd[2]];
    let occupied = |c: [usize; 3]| cells.labels[cells.index(c)] != 0;
    for k in 0..cd[2] {
        for j in 0..cd[1] {
            for i in 0..cd[0] {
                if occupied([i, j, k]) {
                    for c in 0..8 {
                        node_id[node_index(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1))] = 0;
                    }
                }
            }
        }
    }
    let mut nodes = Vec::new();
    for k in 0..nd[2] {
        for j in 0..nd[1] {
            for i in 0..nd[0] {
                let idx = node_index(i, j, k);
                if node_id[idx] == 0 {
                    node_id[idx] = nodes.len() as u32;
                    nodes.push([
                        cells.lower[0] + i as f64 * cells.pitch,
                        cells.lower[1] + j as f64 * cells.pitch,
                        cells.lower[2] + k as f64 * cells.pitch,
                    ]);
                }
            }
        }
    }

    let tets = kuhn_tets_oriented();
    let mut elements = Vec::new();
    let mut element_label = Vec::new();
    let mut pectoral_top: Option<usize> = None;
    let mut lowest: Option<usize> = None;
    for k in 0..cd[2] {
        for j in 0..cd[1] {
            for i in 0..cd[0] {
                let label = cells.labels[cells.index([i, j, k])];
                if label == 0 {
                    continue;
                }
                lowest = Some(lowest.map_or(k, |l| l.min(k)));
                if label == Tissue::Pectoral.code() {
                    pectoral_top = Some(pectoral_top.map_or(k + 1, |t| t.max(k + 1)));
                }
                let corner = |c: usize| {
                    node_id[node_index(i + (c & 1), j + ((c >> 1) & 1), k + ((c >> 2) & 1))] as usize
                };
                for t in &tets {
                    elements.push(t.map(corner));
                    element_label.push(label);
                }
            }
        }
    }
    let plane_layer = pectoral_top.or(lowest).unwrap_or(0);
    let plane = cells.lower[POSTERIOR_AXIS] + plane_layer as f64 * cells.pitch;
    let eps = 1e-9 * cells.pitch;
    let boundary_tags = nodes
        .iter()
        .map(|n| {
            if n[POSTERIOR_AXIS] <= plane + eps {
                NodeTag::FixedPosterior
            } else {
                NodeTag::Free
            }
        })
        .collect();
    TetMesh {
        nodes,
        elements,
        element_label,
        boundary_tags,
    }
}

/// Label volume of the meshed cells sampled at the voxel centers of `vol`'s grid.
pub fn meshed_cell_volume(vol: &LabelVolume, budget: ElementBudget) -> Result<LabelVolume, MeshError> {
    let cells = select_cells(vol, budget)?;
    let grid = *vol.grid();
    let v = grid.spacing[0];
    let mut data = Vec::with_capacity(grid.len());
    for k in 0..grid.dims[2] {
        for j in 0..grid.dims[1] {
            for i in 0..grid.dims[0] {
                let c = [i, j, k].map(|x| (((x as f64 + 0.5) * v) / cells.pitch).floor() as usize);
                data.push(cells.labels[cells.index(c)]);
            }
        }
    }
    LabelVolume::new(grid, data).map_err(|e| MeshError::Parse(e.to_string()))
}

/// Cell pitch (mm) the mesher would use for this volume and budget.
pub fn selected_pitch(vol: &LabelVolume, budget: ElementBudget) -> Result<f64, MeshError> {
    select_cells(vol, budget).map(|c| c.pitch)
}
