//! Damped central-difference dynamic relaxation.
//!
//! `M a + c M v + f_int(u) = f_contact(u)` with lumped `M`. The plates follow
//! a smoothstep ramp and then hold. Surface nodes get extra mass so the
//! contact penalty does not restrict the step; this changes the transient
//! only, not the equilibrium.

use std::collections::HashMap;
use std::time::Instant;

use crate::fem::{FemError, FemModel};
use crate::material::MaterialTable;
use crate::mesher::TetMesh;

use super::{
    critical_timestep, residual_ratio, CompressionSetup, Constraints, ExplicitParams, FailureReason,
    PlateState, Problem, SimulationResult, SolveStatus, SolverError, SolverKind, TraceEntry,
};

/// Largest per-step displacement, as a fraction of the shortest edge, before
/// the integration is declared unstable.
const MAX_STEP_FRACTION: f64 = 0.25;

/// Target `omega dt` of a surface node on its contact spring. Near 1 the
/// on/off penalty sustains chatter that damping never removes.
const CONTACT_OMEGA_DT: f64 = 0.5;

pub fn solve_explicit(
    mesh: &TetMesh,
    table: &MaterialTable,
    setup: &CompressionSetup,
    params: &ExplicitParams,
) -> Result<SimulationResult, SolverError> {
    let model = FemModel::new(mesh, table)?;
    let constraints = Constraints::from_mesh(mesh, &model, setup.posterior_support, setup.axis);
    solve_explicit_with(model, &constraints, table, setup, params)
}

/// Nodes on faces used by exactly one simulated element.
fn surface_nodes(model: &FemModel) -> Vec<bool> {
    let mut faces: HashMap<[usize; 3], u8> = HashMap::new();
    for el in &model.precomp {
        for skip in 0..4 {
            let mut f = [0usize; 3];
            let mut k = 0;
            for (i, &n) in el.nodes.iter().enumerate() {
                if i != skip {
                    f[k] = n;
                    k += 1;
                }
            }
            f.sort_unstable();
            *faces.entry(f).or_default() += 1;
        }
    }
    let mut on_surface = vec![false; model.num_nodes()];
    for (f, count) in faces {
        if count == 1 {
            for n in f {
                on_surface[n] = true;
            }
        }
    }
    on_surface
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

pub fn solve_explicit_with(
    model: FemModel,
    constraints: &Constraints,
    table: &MaterialTable,
    setup: &CompressionSetup,
    params: &ExplicitParams,
) -> Result<SimulationResult, SolverError> {
    params.validate()?;
    let start = Instant::now();
    let pb = Problem::new(model, constraints, setup, table)?;
    let model = &pb.model;
    let ndof = model.num_dofs();

    let dt_crit = critical_timestep(model);
    let dt = params.time_step.unwrap_or(params.safety_factor * dt_crit);

    let mut mass = model.lumped_mass();
    let surface = surface_nodes(model);
    let contact_mass = pb.penalty * (dt / CONTACT_OMEGA_DT).powi(2);
    for &n in &pb.contact_nodes {
        if surface[n] {
            mass[n] = mass[n].max(contact_mass);
        }
    }

    // Fundamental mode estimate: a shear wave across the largest extent.
    let mut extent: f64 = 0.0;
    for a in 0..3 {
        let (lo, hi) = model
            .reference
            .iter()
            .zip(&model.active_node)
            .filter(|(_, &act)| act)
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (p, _)| (lo.min(p[a]), hi.max(p[a])));
        extent = extent.max(hi - lo);
    }
    let mu_min = model.materials.iter().map(|m| m.mu).fold(f64::INFINITY, f64::min);
    let rho_eff = mass.iter().sum::<f64>() / model.total_volume();
    let omega = std::f64::consts::PI * (mu_min / rho_eff).sqrt() / extent;
    let period = 2.0 * std::f64::consts::PI / omega;
    let damping = params.mass_damping.unwrap_or(2.0 * omega);
    let moving = pb.plates_start != pb.plates_end;
    let ramp = if moving { params.ramp_time.unwrap_or(2.0 * period) } else { 0.0 };
    let max_time = params.max_time.unwrap_or(ramp + 40.0 * period);
    let max_steps = (max_time / dt).ceil() as usize;

    let plates_at = |t: f64| -> PlateState {
        if ramp <= 0.0 {
            pb.plates_end
        } else {
            PlateState::interpolate(&pb.plates_start, &pb.plates_end, smoothstep(t / ramp))
        }
    };

    let mut u = vec![0.0; ndof];
    let mut v = vec![0.0; ndof];
    let mut f_int = vec![0.0; ndof];
    let mut fc = vec![0.0; ndof];
    let mut trace = Vec::new();
    let c1 = 1.0 - 0.5 * damping * dt;
    let c2 = 1.0 / (1.0 + 0.5 * damping * dt);
    let unstable_dt = dt > dt_crit;
    let mut last_ratio = f64::INFINITY;

    let finish = |u: &[f64], status, reason, trace, ratio, iterations, plates| SimulationResult {
        solver: SolverKind::Explicit,
        status,
        failure_reason: reason,
        displacements: Problem::to_nodal(u),
        trace,
        final_residual_ratio: ratio,
        plates,
        iterations,
        time_step: dt,
        ramp_time: ramp,
        penalty_per_node: pb.penalty,
        wall_time_s: start.elapsed().as_secs_f64(),
    };

    let failure_entry = |step: usize, t: f64, u: &[f64], v: &[f64], ratio: f64| {
        let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        TraceEntry {
            step,
            progress: t,
            residual_ratio: ratio,
            kinetic_energy: (0..ndof).map(|i| 0.5 * mass[i / 3] * v[i] * v[i]).sum(),
            strain_energy: model.strain_energy(u).unwrap_or(f64::NAN),
            max_velocity: vmax,
            iterations: step,
        }
    };

    for step in 1..=max_steps {
        let t = (step - 1) as f64 * dt;
        let plates = plates_at(t);
        fc.iter_mut().for_each(|x| *x = 0.0);
        pb.add_contact(&u, &plates, &mut fc);
        let mut max_step: f64 = 0.0;
        let mut u_next = u.clone();
        for i in 0..ndof {
            if pb.constrained[i] {
                v[i] = 0.0;
                continue;
            }
            let a = (fc[i] - f_int[i]) / mass[i / 3];
            v[i] = (c1 * v[i] + dt * a) * c2;
            let du = dt * v[i];
            max_step = max_step.max(du.abs());
            u_next[i] += du;
        }
        let t_new = t + dt;
        if !max_step.is_finite() || max_step > MAX_STEP_FRACTION * pb.h_min {
            let msg = format!(
                "step {step}: nodal increment {max_step:e} m exceeds {MAX_STEP_FRACTION} of the shortest edge ({:e} m); dt {dt:e} s vs critical {dt_crit:e} s",
                pb.h_min
            );
            trace.push(failure_entry(step, t, &u, &v, last_ratio));
            return Ok(finish(&u, SolveStatus::Failed, Some(FailureReason::DtInstability(msg)), trace, last_ratio, step, plates));
        }
        match model.internal_forces(&u_next) {
            Ok(f) => f_int = f,
            Err(FemError::Inverted { elements }) => {
                let reason = if unstable_dt {
                    FailureReason::DtInstability(format!(
                        "step {step}: {} elements inverted with dt {dt:e} s above critical {dt_crit:e} s",
                        elements.len()
                    ))
                } else {
                    FailureReason::InvertedElements(elements)
                };
                trace.push(failure_entry(step, t, &u, &v, last_ratio));
                return Ok(finish(&u, SolveStatus::Failed, Some(reason), trace, last_ratio, step, plates));
            }
            Err(e) => return Err(e.into()),
        }
        u = u_next;

        let holding = t_new >= ramp;
        let record = step % params.trace_interval == 0;
        if holding || record {
            let plates = plates_at(t_new);
            let mut r = f_int.clone();
            fc.iter_mut().for_each(|x| *x = 0.0);
            pb.add_contact(&u, &plates, &mut fc);
            for i in 0..ndof {
                if pb.constrained[i] {
                    r[i] = 0.0;
                    fc[i] = 0.0;
                } else {
                    r[i] -= fc[i];
                }
            }
            last_ratio = residual_ratio(&r, &fc);
            let vmax = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            let done = holding && vmax < params.convergence_velocity && last_ratio < params.residual_tol;
            if record || done {
                let ke: f64 = (0..ndof).map(|i| 0.5 * mass[i / 3] * v[i] * v[i]).sum();
                trace.push(TraceEntry {
                    step,
                    progress: t_new,
                    residual_ratio: last_ratio,
                    kinetic_energy: ke,
                    strain_energy: model.strain_energy(&u).unwrap_or(f64::NAN),
                    max_velocity: vmax,
                    iterations: step,
                });
            }
            if done {
                return Ok(finish(&u, SolveStatus::Converged, None, trace, last_ratio, step, plates));
            }
        }
    }
    trace.push(failure_entry(max_steps, max_steps as f64 * dt, &u, &v, last_ratio));
    let msg = format!(
        "no equilibrium within {max_time:.4} s ({max_steps} steps); residual ratio {last_ratio:e}"
    );
    Ok(finish(&u, SolveStatus::Failed, Some(FailureReason::Divergence(msg)), trace, last_ratio, max_steps, pb.plates_end))
}
