//! Plate compression solvers.
//!
//! Both solvers find the equilibrium `f_int(u) = f_contact(u)` of the breast
//! squeezed between two rigid plates normal to the compression axis. Each plate
//! advances by half the total compression. Posterior (chest-wall) nodes are
//! constrained; nodes that touch no simulated element are fixed.
//!
//! The explicit solver integrates damped dynamics with central differences
//! until the motion dies out; the implicit solver steps the plates and solves
//! each increment with Newton iterations.

mod contact;
mod explicit;
mod implicit;
mod pcg;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fem::{FemError, FemModel};
use crate::material::MaterialTable;
use crate::mesher::{NodeTag, TetMesh};

pub use contact::{plate_contact_force, ContactForces, PlateState};
pub use explicit::{solve_explicit, solve_explicit_with};
pub use implicit::{solve_implicit, solve_implicit_with};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        })
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "x" => Ok(Axis::X),
            "y" => Ok(Axis::Y),
            "z" => Ok(Axis::Z),
            _ => Err(format!("unknown axis {s:?} (expected x, y or z)")),
        }
    }
}

/// How chest-wall nodes are held.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PosteriorSupport {
    /// All three displacement components pinned.
    Fixed,
    /// Free to slide along the compression axis only.
    Sliding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompressionSetup {
    pub axis: Axis,
    /// Fraction of the initial thickness along `axis` removed by the plates.
    pub compression_fraction: f64,
    /// Volumetric penalty scale (N/m³). `None` uses `100 max(lambda + 2 mu) / h_min`.
    /// The per-node penalty is this times `h_min^2`.
    pub penalty_stiffness: Option<f64>,
    pub posterior_support: PosteriorSupport,
}

impl Default for CompressionSetup {
    fn default() -> Self {
        CompressionSetup {
            axis: Axis::Y,
            compression_fraction: 0.3,
            penalty_stiffness: None,
            posterior_support: PosteriorSupport::Sliding,
        }
    }
}

impl CompressionSetup {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(0.0..=0.6).contains(&self.compression_fraction) {
            return Err(SolverError::InvalidSetup(format!(
                "compression fraction {} outside [0, 0.6]",
                self.compression_fraction
            )));
        }
        if let Some(k) = self.penalty_stiffness {
            if !(k > 0.0 && k.is_finite()) {
                return Err(SolverError::InvalidSetup(format!("penalty stiffness must be positive, got {k}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExplicitParams {
    /// Time step (s). `None` uses `safety_factor * critical_timestep`.
    /// Larger values are accepted so instability can be provoked deliberately.
    pub time_step: Option<f64>,
    pub safety_factor: f64,
    /// Mass-proportional damping (1/s). `None` critically damps the
    /// estimated fundamental mode.
    pub mass_damping: Option<f64>,
    /// Plate ramp duration (s). `None` is two fundamental periods.
    pub ramp_time: Option<f64>,
    /// Simulated time limit (s). `None` is the ramp plus forty periods.
    pub max_time: Option<f64>,
    /// Largest nodal speed at convergence (m/s).
    pub convergence_velocity: f64,
    /// Largest `|f_int - f_ext| / |f_ext|` at convergence.
    pub residual_tol: f64,
    /// Steps between trace entries.
    pub trace_interval: usize,
}

impl Default for ExplicitParams {
    fn default() -> Self {
        ExplicitParams {
            time_step: None,
            safety_factor: 0.5,
            mass_damping: None,
            ramp_time: None,
            max_time: None,
            convergence_velocity: 1e-4,
            residual_tol: 1e-3,
            trace_interval: 100,
        }
    }
}

impl ExplicitParams {
    pub fn validate(&self) -> Result<(), SolverError> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(SolverError::InvalidParams(format!("{name} must be positive, got {v}")))
            }
        };
        if let Some(dt) = self.time_step {
            positive("time_step", dt)?;
        }
        if !(self.safety_factor > 0.0 && self.safety_factor <= 1.0) {
            return Err(SolverError::InvalidParams(format!(
                "safety_factor must be in (0, 1], got {}",
                self.safety_factor
            )));
        }
        if let Some(c) = self.mass_damping {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(SolverError::InvalidParams(format!("mass_damping must be non-negative, got {c}")));
            }
        }
        if let Some(t) = self.ramp_time {
            positive("ramp_time", t)?;
        }
        if let Some(t) = self.max_time {
            positive("max_time", t)?;
        }
        positive("convergence_velocity", self.convergence_velocity)?;
        positive("residual_tol", self.residual_tol)?;
        if self.trace_interval == 0 {
            return Err(SolverError::InvalidParams("trace_interval must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImplicitParams {
    pub load_steps: usize,
    /// Newton stops when `|R| / |R0| < newton_tol` within a load step.
    pub newton_tol: f64,
    pub max_newton_iters: usize,
    pub line_search_max_halvings: usize,
    pub cg_tol: f64,
    pub cg_max_iters: usize,
    /// Times a failed load increment may be halved before giving up.
    pub max_cutbacks: usize,
}

impl Default for ImplicitParams {
    fn default() -> Self {
        ImplicitParams {
            load_steps: 10,
            newton_tol: 1e-6,
            max_newton_iters: 30,
            line_search_max_halvings: 10,
            cg_tol: 1e-8,
            cg_max_iters: 20_000,
            max_cutbacks: 4,
        }
    }
}

impl ImplicitParams {
    pub fn validate(&self) -> Result<(), SolverError> {
        let bad = |m: String| Err(SolverError::InvalidParams(m));
        if self.load_steps == 0 || self.max_newton_iters == 0 || self.cg_max_iters == 0 {
            return bad("load_steps, max_newton_iters and cg_max_iters must be at least 1".into());
        }
        if !(self.newton_tol > 0.0 && self.newton_tol < 1.0) {
            return bad(format!("newton_tol must be in (0, 1), got {}", self.newton_tol));
        }
        if !(self.cg_tol > 0.0 && self.cg_tol < 1.0) {
            return bad(format!("cg_tol must be in (0, 1), got {}", self.cg_tol));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Explicit,
    Implicit,
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverKind::Explicit => "explicit",
            SolverKind::Implicit => "implicit",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveStatus {
    Converged,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "detail", rename_all = "snake_case")]
pub enum FailureReason {
    InvertedElements(Vec<usize>),
    Divergence(String),
    DtInstability(String),
}

impl fmt::Display for FailureReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailureReason::InvertedElements(ids) => {
                let shown: Vec<String> = ids.iter().take(20).map(|i| i.to_string()).collect();
                let more = if ids.len() > 20 { ", ..." } else { "" };
                write!(f, "inverted elements ({}): {}{more}", ids.len(), shown.join(", "))
            }
            FailureReason::Divergence(m) => write!(f, "divergence: {m}"),
            FailureReason::DtInstability(m) => write!(f, "dt instability: {m}"),
        }
    }
}

/// One sample of solver progress. For the explicit solver `progress` is time
/// (s); for the implicit solver it is the load fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub step: usize,
    pub progress: f64,
    pub residual_ratio: f64,
    pub kinetic_energy: f64,
    pub strain_energy: f64,
    pub max_velocity: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationResult {
    pub solver: SolverKind,
    pub status: SolveStatus,
    pub failure_reason: Option<FailureReason>,
    /// Nodal displacements (m), final or last accepted state.
    pub displacements: Vec<[f64; 3]>,
    pub trace: Vec<TraceEntry>,
    /// `|f_int - f_ext| / |f_ext|` over unconstrained DOFs at the final state.
    pub final_residual_ratio: f64,
    pub plates: PlateState,
    /// Time steps (explicit) or Newton iterations (implicit).
    pub iterations: usize,
    /// Effective time step (explicit) or 0.
    pub time_step: f64,
    /// Duration of the plate ramp (explicit) or 0.
    pub ramp_time: f64,
    pub penalty_per_node: f64,
    #[serde(skip)]
    pub wall_time_s: f64,
}

impl SimulationResult {
    pub fn converged(&self) -> bool {
        self.status == SolveStatus::Converged
    }

    /// Displacements in mm.
    pub fn displacements_mm(&self) -> Vec<[f64; 3]> {
        self.displacements.iter().map(|d| d.map(|c| c / crate::MM)).collect()
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error(transparent)]
    Fem(#[from] FemError),
    #[error("invalid compression setup: {0}")]
    InvalidSetup(String),
    #[error("invalid solver parameters: {0}")]
    InvalidParams(String),
    #[error("no constrained posterior nodes; the problem has rigid-body modes")]
    NoFixedNodes,
    #[error("mesh has no simulated elements")]
    NothingToSimulate,
}

/// Per-DOF constraint flags (`true` = displacement held at zero).
#[derive(Debug, Clone, PartialEq)]
pub struct Constraints {
    pub dofs: Vec<bool>,
}

impl Constraints {
    pub fn none(num_nodes: usize) -> Self {
        Constraints {
            dofs: vec![false; 3 * num_nodes],
        }
    }

    /// Posterior tags from the mesh under the given support, plus every node
    /// without a simulated element.
    pub fn from_mesh(mesh: &TetMesh, model: &FemModel, support: PosteriorSupport, axis: Axis) -> Self {
        let mut c = Constraints::none(mesh.num_nodes());
        for (n, tag) in mesh.boundary_tags.iter().enumerate() {
            if *tag == NodeTag::FixedPosterior {
                for d in 0..3 {
                    let free = support == PosteriorSupport::Sliding
                        && d == axis.index()
                        && axis.index() != crate::mesher::POSTERIOR_AXIS;
                    if !free {
                        c.fix(n, d);
                    }
                }
            }
        }
        c.fix_inactive(model);
        c
    }

    pub fn fix(&mut self, node: usize, dof: usize) {
        self.dofs[3 * node + dof] = true;
    }

    pub fn fix_node(&mut self, node: usize) {
        for d in 0..3 {
            self.fix(node, d);
        }
    }

    pub fn fix_inactive(&mut self, model: &FemModel) {
        for (n, &active) in model.active_node.iter().enumerate() {
            if !active {
                self.fix_node(n);
            }
        }
    }

    pub fn is_fixed(&self, node: usize, dof: usize) -> bool {
        self.dofs[3 * node + dof]
    }

    pub fn count(&self) -> usize {
        self.dofs.iter().filter(|&&c| c).count()
    }
}

/// `min over elements of (shortest edge) / c_d`, `c_d = sqrt((lambda + 2 mu) / rho)`.
pub fn critical_timestep(model: &FemModel) -> f64 {
    model
        .precomp
        .iter()
        .map(|el| {
            let x = el.nodes.map(|n| model.reference[n]);
            let mut h = f64::INFINITY;
            for i in 0..4 {
                for j in i + 1..4 {
                    let d: f64 = (0..3).map(|c| (x[i][c] - x[j][c]).powi(2)).sum();
                    h = h.min(d.sqrt());
                }
            }
            h / model.material_of(el).dilatational_wave_speed()
        })
        .fold(f64::INFINITY, f64::min)
}

/// Everything both solvers share, in SI units.
pub(crate) struct Problem {
    pub model: FemModel,
    pub constrained: Vec<bool>,
    pub axis: usize,
    /// Active nodes whose plate-axis DOF is free.
    pub contact_nodes: Vec<usize>,
    pub penalty: f64,
    pub plates_start: PlateState,
    pub plates_end: PlateState,
    pub h_min: f64,
}

impl Problem {
    pub fn new(
        model: FemModel,
        constraints: &Constraints,
        setup: &CompressionSetup,
        table: &MaterialTable,
    ) -> Result<Self, SolverError> {
        setup.validate()?;
        if model.precomp.is_empty() {
            return Err(SolverError::NothingToSimulate);
        }
        if constraints.dofs.len() != model.num_dofs() {
            return Err(SolverError::InvalidSetup(format!(
                "constraints cover {} DOFs, model has {}",
                constraints.dofs.len(),
                model.num_dofs()
            )));
        }
        // every active node with all DOFs free means nothing pins the body
        let pinned = (0..model.num_nodes())
            .any(|n| model.active_node[n] && (0..3).any(|d| constraints.is_fixed(n, d)));
        if !pinned {
            return Err(SolverError::NoFixedNodes);
        }
        let axis = setup.axis.index();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (n, p) in model.reference.iter().enumerate() {
            if model.active_node[n] {
                lo = lo.min(p[axis]);
                hi = hi.max(p[axis]);
            }
        }
        let h_min = model.min_edge_length();
        let kappa = setup
            .penalty_stiffness
            .unwrap_or_else(|| 100.0 * table.max_p_modulus() / h_min);
        let half = 0.5 * setup.compression_fraction * (hi - lo);
        let contact_nodes = (0..model.num_nodes())
            .filter(|&n| model.active_node[n] && !constraints.is_fixed(n, axis))
            .collect();
        Ok(Problem {
            constrained: constraints.dofs.clone(),
            axis,
            contact_nodes,
            penalty: kappa * h_min * h_min,
            plates_start: PlateState {
                axis: setup.axis,
                lower: lo,
                upper: hi,
            },
            plates_end: PlateState {
                axis: setup.axis,
                lower: lo + half,
                upper: hi - half,
            },
            h_min,
            model,
        })
    }

    /// Adds contact forces for plates at `plates` into `f` (flat DOFs).
    pub fn add_contact(&self, u: &[f64], plates: &PlateState, f: &mut [f64]) {
        for &n in &self.contact_nodes {
            let dof = 3 * n + self.axis;
            f[dof] += contact::penalty_force(self.model.reference[n][self.axis] + u[dof], plates, self.penalty);
        }
    }

    /// Nodes currently penetrating a plate.
    pub fn contact_active(&self, u: &[f64], plates: &PlateState) -> Vec<usize> {
        self.contact_nodes
            .iter()
            .copied()
            .filter(|&n| {
                let dof = 3 * n + self.axis;
                contact::penalty_force(self.model.reference[n][self.axis] + u[dof], plates, self.penalty) != 0.0
            })
            .collect()
    }

    /// Out-of-balance force `f_int - f_contact` with constrained DOFs zeroed,
    /// and the contact force it was measured against.
    pub fn residual(&self, u: &[f64], plates: &PlateState) -> Result<(Vec<f64>, Vec<f64>), FemError> {
        let mut r = self.model.internal_forces(u)?;
        let mut fc = vec![0.0; r.len()];
        self.add_contact(u, plates, &mut fc);
        for i in 0..r.len() {
            if self.constrained[i] {
                r[i] = 0.0;
                fc[i] = 0.0;
            } else {
                r[i] -= fc[i];
            }
        }
        Ok((r, fc))
    }

    pub fn to_nodal(u: &[f64]) -> Vec<[f64; 3]> {
        u.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect()
    }
}

pub(crate) fn residual_ratio(r: &[f64], f_ext: &[f64]) -> f64 {
    let rn = pcg::norm(r);
    let fn_ = pcg::norm(f_ext);
    if fn_ > 0.0 {
        rn / fn_
    } else if rn == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::Material;

    #[test]
    fn wave_speed_and_timestep() {
        let fat = Material::fat(0.45).unwrap();
        let c = fat.dilatational_wave_speed();
        assert!((c - 4.113).abs() < 1e-3, "{c}");
        assert!((1e-3 / c - 2.43e-4).abs() < 1e-6);
    }

    #[test]
    fn axis_parse() {
        assert_eq!("Y".parse::<Axis>().unwrap(), Axis::Y);
        assert!("w".parse::<Axis>().is_err());
    }

    #[test]
    fn setup_rejects_bad_fraction() {
        let s = CompressionSetup {
            compression_fraction: 0.7,
            ..CompressionSetup::default()
        };
        assert!(s.validate().is_err());
    }

    #[test]
    fn failure_reason_messages() {
        assert!(FailureReason::DtInstability("x".into()).to_string().starts_with("dt instability"));
        assert!(FailureReason::InvertedElements(vec![3, 4])
            .to_string()
            .contains("3, 4"));
    }
}
