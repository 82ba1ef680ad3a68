//! Linear-tetrahedron total-Lagrangian kinematics and global assembly.
//!
//! All quantities are SI: the mesh is converted from mm on construction.
//! Displacements are flat DOF vectors `u[3 * node + axis]` in metres.
//! Elements whose label is rigid are dropped; nodes that touch no simulated
//! element carry no mass and must be constrained by the caller.

mod sparse;

use nalgebra::{Matrix3, SMatrix, Vector3};
use rayon::prelude::*;
use thiserror::Error;

use crate::material::{Material, MaterialError, MaterialTable};
use crate::mesher::TetMesh;
use crate::MM;

pub use sparse::CsrMatrix;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FemError {
    #[error("degenerate reference element {element} (volume {volume:e} m^3)")]
    Degenerate { element: usize, volume: f64 },
    #[error("{} inverted element(s): {}", .elements.len(), preview(.elements))]
    Inverted { elements: Vec<usize> },
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error("DOF vector has length {found}, expected {expected}")]
    Dimension { expected: usize, found: usize },
}

fn preview(ids: &[usize]) -> String {
    const SHOWN: usize = 10;
    let mut s = ids.iter().take(SHOWN).map(|i| i.to_string()).collect::<Vec<_>>().join(", ");
    if ids.len() > SHOWN {
        s.push_str(", ...");
    }
    s
}

/// Constant per-element data.
#[derive(Debug, Clone, PartialEq)]
pub struct ElementPrecomp {
    /// Index into the source mesh's element list.
    pub element: usize,
    pub nodes: [usize; 4],
    /// Column `a` is the reference gradient of shape function `a` (1/m).
    pub grad: SMatrix<f64, 3, 4>,
    /// Reference volume (m³).
    pub volume: f64,
    /// Index into [`FemModel::materials`].
    pub material: usize,
}

/// Shape-function gradients and volume of a tet given in metres.
pub fn tet_gradients(x: &[[f64; 3]; 4]) -> Option<(SMatrix<f64, 3, 4>, f64)> {
    let p = x.map(|v| Vector3::new(v[0], v[1], v[2]));
    let d = Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]);
    let det = d.determinant();
    let inv = d.try_inverse()?;
    // N_{1..3}(X) = (D^-1 (X - X0))_i, so their gradients are the rows of D^-1.
    let mut g = SMatrix::<f64, 3, 4>::zeros();
    for a in 0..3 {
        g.set_column(a + 1, &inv.row(a).transpose());
    }
    let g0 = -(g.column(1) + g.column(2) + g.column(3));
    g.set_column(0, &g0);
    Some((g, det / 6.0))
}

#[derive(Debug, Clone)]
pub struct FemModel {
    /// Reference positions (m).
    pub reference: Vec<[f64; 3]>,
    pub precomp: Vec<ElementPrecomp>,
    pub materials: Vec<Material>,
    /// Node belongs to at least one simulated element.
    pub active_node: Vec<bool>,
    adjacency: Vec<Vec<usize>>,
    /// Per element, the offset of node b within node a's neighbour list, times 3.
    block_slots: Vec<[usize; 16]>,
}

impl FemModel {
    pub fn new(mesh: &TetMesh, table: &MaterialTable) -> Result<Self, FemError> {
        table.check_covers(mesh.element_label.iter().copied())?;
        let reference: Vec<[f64; 3]> = mesh.nodes.iter().map(|p| p.map(|c| c * MM)).collect();
        let labels: Vec<u8> = table.materials.keys().copied().collect();
        let materials: Vec<Material> = table.materials.values().cloned().collect();
        let precomp = precompute_elements(mesh, table, &reference, &labels)?;

        let mut active_node = vec![false; reference.len()];
        let mut adjacency: Vec<Vec<usize>> = (0..reference.len()).map(|i| vec![i]).collect();
        for el in &precomp {
            for &a in &el.nodes {
                active_node[a] = true;
                adjacency[a].extend_from_slice(&el.nodes);
            }
        }
        for nbrs in adjacency.iter_mut() {
            nbrs.sort_unstable();
            nbrs.dedup();
        }
        let block_slots = precomp
            .iter()
            .map(|el| {
                let mut s = [0usize; 16];
                for a in 0..4 {
                    for b in 0..4 {
                        let pos = adjacency[el.nodes[a]]
                            .binary_search(&el.nodes[b])
                            .expect("element nodes are adjacent");
                        s[4 * a + b] = 3 * pos;
                    }
                }
                s
            })
            .collect();
        Ok(FemModel {
            reference,
            precomp,
            materials,
            active_node,
            adjacency,
            block_slots,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.reference.len()
    }

    pub fn num_dofs(&self) -> usize {
        3 * self.reference.len()
    }

    pub fn material_of(&self, el: &ElementPrecomp) -> &Material {
        &self.materials[el.material]
    }

    fn check_len(&self, u: &[f64]) -> Result<(), FemError> {
        if u.len() != self.num_dofs() {
            return Err(FemError::Dimension {
                expected: self.num_dofs(),
                found: u.len(),
            });
        }
        Ok(())
    }

    /// `F = I + sum_a u_a (grad N_a)^T` for precomputed element `e`.
    pub fn deformation_gradient(&self, e: usize, u: &[f64]) -> Matrix3<f64> {
        deformation_gradient(&self.precomp[e], u)
    }

    /// Shortest reference edge over simulated elements (m).
    pub fn min_edge_length(&self) -> f64 {
        self.precomp
            .iter()
            .map(|el| min_edge(&el.nodes.map(|n| self.reference[n])))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn total_volume(&self) -> f64 {
        self.precomp.iter().map(|el| el.volume).sum()
    }

    /// Total strain energy (J).
    pub fn strain_energy(&self, u: &[f64]) -> Result<f64, FemError> {
        self.check_len(u)?;
        let parts: Vec<Result<f64, usize>> = self
            .precomp
            .par_iter()
            .map(|el| {
                let f = deformation_gradient(el, u);
                self.material_of(el)
                    .strain_energy(&f)
                    .map(|w| w * el.volume)
                    .map_err(|_| el.element)
            })
            .collect();
        collect_inverted(parts).map(|w| w.iter().sum())
    }

    /// Internal nodal forces `f_a = V0 P(F) grad N_a` as a flat DOF vector (N).
    pub fn internal_forces(&self, u: &[f64]) -> Result<Vec<f64>, FemError> {
        self.check_len(u)?;
        let parts: Vec<Result<SMatrix<f64, 3, 4>, usize>> = self
            .precomp
            .par_iter()
            .map(|el| {
                let f = deformation_gradient(el, u);
                let p = self.material_of(el).pk1_stress(&f).map_err(|_| el.element)?;
                Ok(el.volume * p * el.grad)
            })
            .collect();
        let forces = collect_inverted(parts)?;
        let mut out = vec![0.0; self.num_dofs()];
        for (el, fe) in self.precomp.iter().zip(&forces) {
            for (a, &n) in el.nodes.iter().enumerate() {
                for i in 0..3 {
                    out[3 * n + i] += fe[(i, a)];
                }
            }
        }
        Ok(out)
    }

    /// Empty stiffness matrix with this mesh's sparsity pattern.
    pub fn tangent_pattern(&self) -> CsrMatrix {
        CsrMatrix::from_node_adjacency(&self.adjacency)
    }

    /// Tangent stiffness `K_ab[i][k] = V0 sum_jl dNa_j A_ijkl dNb_l` (N/m).
    /// Rows and columns of `constrained` DOFs are replaced by the identity.
    pub fn assemble_tangent(&self, u: &[f64], constrained: &[bool]) -> Result<CsrMatrix, FemError> {
        let mut k = self.tangent_pattern();
        self.assemble_tangent_into(u, &mut k)?;
        k.eliminate(constrained);
        Ok(k)
    }

    /// Overwrites `k` (which must come from [`Self::tangent_pattern`]) with
    /// the unconstrained tangent.
    pub fn assemble_tangent_into(&self, u: &[f64], k: &mut CsrMatrix) -> Result<(), FemError> {
        self.check_len(u)?;
        let parts: Vec<Result<SMatrix<f64, 12, 12>, usize>> = self
            .precomp
            .par_iter()
            .map(|el| {
                let f = deformation_gradient(el, u);
                let a = self.material_of(el).material_tangent(&f).map_err(|_| el.element)?;
                Ok(element_stiffness(el, &a))
            })
            .collect();
        let blocks = collect_inverted(parts)?;
        k.clear();
        for ((el, ke), slots) in self.precomp.iter().zip(&blocks).zip(&self.block_slots) {
            for a in 0..4 {
                let row0 = 3 * el.nodes[a];
                for b in 0..4 {
                    let off = slots[4 * a + b];
                    for i in 0..3 {
                        let base = k.row_ptr[row0 + i] + off;
                        for kk in 0..3 {
                            k.val[base + kk] += ke[(3 * a + i, 3 * b + kk)];
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Row-sum lumped mass per node (kg): `rho V0 / 4` from each incident element.
    pub fn lumped_mass(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.num_nodes()];
        for el in &self.precomp {
            let share = self.material_of(el).density * el.volume / 4.0;
            for &n in &el.nodes {
                m[n] += share;
            }
        }
        m
    }

    /// Elements whose deformed signed volume is not positive, by mesh index.
    pub fn inverted_elements(&self, u: &[f64]) -> Vec<usize> {
        self.precomp
            .iter()
            .filter(|el| !(deformation_gradient(el, u).determinant() > 0.0))
            .map(|el| el.element)
            .collect()
    }
}

/// Reference data for every non-rigid element of `mesh`.
pub fn precompute_elements(
    mesh: &TetMesh,
    table: &MaterialTable,
    reference_m: &[[f64; 3]],
    material_labels: &[u8],
) -> Result<Vec<ElementPrecomp>, FemError> {
    let mut out = Vec::with_capacity(mesh.num_elements());
    for (e, tet) in mesh.elements.iter().enumerate() {
        let label = mesh.element_label[e];
        if table.is_rigid(label) {
            continue;
        }
        let material = material_labels
            .iter()
            .position(|&l| l == label)
            .ok_or(MaterialError::MissingLabel(label))?;
        let x = tet.map(|n| reference_m[n]);
        let h = min_edge(&x);
        let degenerate = |volume| FemError::Degenerate { element: e, volume };
        let (grad, volume) = tet_gradients(&x).ok_or(degenerate(0.0))?;
        if !(volume > 1e-9 * h * h * h) {
            return Err(degenerate(volume));
        }
        out.push(ElementPrecomp {
            element: e,
            nodes: *tet,
            grad,
            volume,
            material,
        });
    }
    Ok(out)
}

pub fn deformation_gradient(el: &ElementPrecomp, u: &[f64]) -> Matrix3<f64> {
    let mut f = Matrix3::identity();
    for (a, &n) in el.nodes.iter().enumerate() {
        let ua = Vector3::new(u[3 * n], u[3 * n + 1], u[3 * n + 2]);
        f += ua * el.grad.column(a).transpose();
    }
    f
}

fn element_stiffness(el: &ElementPrecomp, a: &SMatrix<f64, 9, 9>) -> SMatrix<f64, 12, 12> {
    let g = &el.grad;
    let mut ke = SMatrix::<f64, 12, 12>::zeros();
    for na in 0..4 {
        for nb in 0..4 {
            for i in 0..3 {
                for k in 0..3 {
                    let mut s = 0.0;
                    for j in 0..3 {
                        for l in 0..3 {
                            s += g[(j, na)] * a[(3 * i + j, 3 * k + l)] * g[(l, nb)];
                        }
                    }
                    ke[(3 * na + i, 3 * nb + k)] = el.volume * s;
                }
            }
        }
    }
    ke
}

fn min_edge(x: &[[f64; 3]; 4]) -> f64 {
    let mut h = f64::INFINITY;
    for i in 0..4 {
        for j in i + 1..4 {
            let d: f64 = (0..3).map(|c| (x[i][c] - x[j][c]).powi(2)).sum();
            h = h.min(d.sqrt());
        }
    }
    h
}

fn collect_inverted<T>(parts: Vec<Result<T, usize>>) -> Result<Vec<T>, FemError> {
    let bad: Vec<usize> = parts.iter().filter_map(|r| r.as_ref().err().copied()).collect();
    if !bad.is_empty() {
        return Err(FemError::Inverted { elements: bad });
    }
    Ok(parts.into_iter().map(|r| r.ok().unwrap()).collect())
}
