//! Quasi-static load stepping with Newton iterations, Jacobi-PCG linear
//! solves, backtracking line search, and load-increment cutback.

use std::time::Instant;

use crate::fem::{CsrMatrix, FemError, FemModel};
use crate::material::MaterialTable;
use crate::mesher::TetMesh;

use super::pcg::{norm, pcg, CgOutcome};
use super::{
    residual_ratio, CompressionSetup, Constraints, FailureReason, ImplicitParams, PlateState, Problem,
    SimulationResult, SolveStatus, SolverError, SolverKind, TraceEntry,
};

/// Relative diagonal shift used after a CG breakdown.
const REGULARIZATION: f64 = 1e-2;

pub fn solve_implicit(
    mesh: &TetMesh,
    table: &MaterialTable,
    setup: &CompressionSetup,
    params: &ImplicitParams,
) -> Result<SimulationResult, SolverError> {
    let model = FemModel::new(mesh, table)?;
    let constraints = Constraints::from_mesh(mesh, &model, setup.posterior_support, setup.axis);
    solve_implicit_with(model, &constraints, table, setup, params)
}

struct Converged {
    u: Vec<f64>,
    iterations: usize,
    ratio: f64,
}

struct NewtonFailure {
    reason: FailureReason,
    iterations: usize,
    /// `|R| / |R0|` at the last accepted iterate.
    ratio: f64,
}

struct Newton<'a> {
    pb: &'a Problem,
    params: &'a ImplicitParams,
    k: CsrMatrix,
}

impl Newton<'_> {
    fn inverted(e: FemError) -> FailureReason {
        match e {
            FemError::Inverted { elements } => FailureReason::InvertedElements(elements),
            other => FailureReason::Divergence(other.to_string()),
        }
    }

    fn tangent(&mut self, u: &[f64], plates: &PlateState, regularize: bool) -> Result<(), FemError> {
        let pb = self.pb;
        pb.model.assemble_tangent_into(u, &mut self.k)?;
        for n in pb.contact_active(u, plates) {
            self.k.add_diagonal(3 * n + pb.axis, pb.penalty);
        }
        if regularize {
            for (i, d) in self.k.diagonal().into_iter().enumerate() {
                self.k.add_diagonal(i, REGULARIZATION * d.abs());
            }
        }
        self.k.eliminate(&pb.constrained);
        Ok(())
    }

    fn solve(&mut self, u0: Vec<f64>, plates: &PlateState) -> Result<Converged, NewtonFailure> {
        let pb = self.pb;
        let fail = |reason, iterations, ratio| NewtonFailure {
            reason,
            iterations,
            ratio,
        };
        let mut u = u0;
        let (mut r, _) = pb
            .residual(&u, plates)
            .map_err(|e| fail(Self::inverted(e), 0, f64::INFINITY))?;
        let r0 = norm(&r);
        let floor = 1e-14 * pb.penalty * pb.h_min;
        if r0 <= floor {
            return Ok(Converged {
                u,
                iterations: 1,
                ratio: 0.0,
            });
        }
        let mut r_norm = r0;
        let mut delta = vec![0.0; u.len()];
        for it in 1..=self.params.max_newton_iters {
            let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
            let mut solved = false;
            for regularize in [false, true] {
                self.tangent(&u, plates, regularize)
                    .map_err(|e| fail(Self::inverted(e), it, r_norm / r0))?;
                match pcg(&self.k, &rhs, &mut delta, self.params.cg_tol, self.params.cg_max_iters) {
                    CgOutcome::Breakdown { .. } => continue,
                    // An inexact direction is still usable; the line search guards it.
                    CgOutcome::Converged { .. } | CgOutcome::MaxIterations { .. } => {
                        solved = true;
                        break;
                    }
                }
            }
            if !solved {
                return Err(fail(
                    FailureReason::Divergence(format!(
                        "conjugate gradient broke down twice (indefinite tangent) at Newton iteration {it}"
                    )),
                    it,
                    r_norm / r0,
                ));
            }

            let mut alpha = 1.0;
            let mut accepted = None;
            let mut last_inverted = None;
            for _ in 0..=self.params.line_search_max_halvings {
                let trial: Vec<f64> = u.iter().zip(&delta).map(|(a, d)| a + alpha * d).collect();
                match pb.residual(&trial, plates) {
                    Ok((rt, _)) => {
                        let n = norm(&rt);
                        if n < r_norm {
                            accepted = Some((trial, rt, n));
                            break;
                        }
                    }
                    Err(FemError::Inverted { elements }) => last_inverted = Some(elements),
                    Err(e) => return Err(fail(FailureReason::Divergence(e.to_string()), it, r_norm / r0)),
                }
                alpha *= 0.5;
            }
            let Some((nu, nr, nn)) = accepted else {
                let reason = match last_inverted {
                    Some(ids) => FailureReason::InvertedElements(ids),
                    None => FailureReason::Divergence(format!(
                        "line search found no decrease at Newton iteration {it} (|R|/|R0| = {:e})",
                        r_norm / r0
                    )),
                };
                return Err(fail(reason, it, r_norm / r0));
            };
            u = nu;
            r = nr;
            r_norm = nn;
            if r_norm / r0 < self.params.newton_tol || r_norm <= floor {
                return Ok(Converged {
                    u,
                    iterations: it,
                    ratio: r_norm / r0,
                });
            }
        }
        Err(fail(
            FailureReason::Divergence(format!(
                "Newton did not converge in {} iterations (|R|/|R0| = {:e})",
                self.params.max_newton_iters,
                r_norm / r0
            )),
            self.params.max_newton_iters,
            r_norm / r0,
        ))
    }
}

pub fn solve_implicit_with(
    model: FemModel,
    constraints: &Constraints,
    table: &MaterialTable,
    setup: &CompressionSetup,
    params: &ImplicitParams,
) -> Result<SimulationResult, SolverError> {
    params.validate()?;
    let start = Instant::now();
    let pb = Problem::new(model, constraints, setup, table)?;
    let ndof = pb.model.num_dofs();
    let mut newton = Newton {
        pb: &pb,
        params,
        k: pb.model.tangent_pattern(),
    };

    let nominal = 1.0 / params.load_steps as f64;
    let mut ds = nominal;
    let mut s = 0.0;
    let mut u = vec![0.0; ndof];
    let mut prev: Option<(Vec<f64>, f64)> = None;
    let mut cutbacks = 0;
    let mut total_iters = 0;
    let mut trace = Vec::new();
    let mut step = 0;

    let finish = |u: &[f64], status, reason, trace, iterations, s: f64| {
        let plates = PlateState::interpolate(&pb.plates_start, &pb.plates_end, s);
        let ratio = match pb.residual(u, &plates) {
            Ok((r, fc)) => residual_ratio(&r, &fc),
            Err(_) => f64::INFINITY,
        };
        SimulationResult {
            solver: SolverKind::Implicit,
            status,
            failure_reason: reason,
            displacements: Problem::to_nodal(u),
            trace,
            final_residual_ratio: ratio,
            plates,
            iterations,
            time_step: 0.0,
            ramp_time: 0.0,
        penalty_per_node: pb.penalty,
            wall_time_s: start.elapsed().as_secs_f64(),
        }
    };

    while s < 1.0 - 1e-12 {
        let s_next = (s + ds).min(1.0);
        let plates = PlateState::interpolate(&pb.plates_start, &pb.plates_end, s_next);
        // extrapolate the previous increment as the starting guess
        let mut guess = u.clone();
        if let Some((inc, prev_ds)) = &prev {
            let scale = (s_next - s) / prev_ds;
            let trial: Vec<f64> = u.iter().zip(inc).map(|(a, d)| a + scale * d).collect();
            if pb.model.inverted_elements(&trial).is_empty() {
                guess = trial;
            }
        }
        match newton.solve(guess, &plates) {
            Ok(c) => {
                step += 1;
                total_iters += c.iterations;
                let inc: Vec<f64> = c.u.iter().zip(&u).map(|(a, b)| a - b).collect();
                prev = Some((inc, s_next - s));
                u = c.u;
                s = s_next;
                cutbacks = 0;
                ds = (2.0 * ds).min(nominal);
                trace.push(TraceEntry {
                    step,
                    progress: s,
                    residual_ratio: c.ratio,
                    kinetic_energy: 0.0,
                    strain_energy: pb.model.strain_energy(&u).unwrap_or(f64::NAN),
                    max_velocity: 0.0,
                    iterations: c.iterations,
                });
            }
            Err(f) => {
                total_iters += f.iterations;
                if cutbacks < params.max_cutbacks {
                    cutbacks += 1;
                    ds *= 0.5;
                    continue;
                }
                trace.push(TraceEntry {
                    step: step + 1,
                    progress: s_next,
                    residual_ratio: f.ratio,
                    kinetic_energy: 0.0,
                    strain_energy: pb.model.strain_energy(&u).unwrap_or(f64::NAN),
                    max_velocity: 0.0,
                    iterations: f.iterations,
                });
                return Ok(finish(&u, SolveStatus::Failed, Some(f.reason), trace, total_iters, s));
            }
        }
    }
    Ok(finish(&u, SolveStatus::Converged, None, trace, total_iters, 1.0))
}
