//! Optimization driver: forward solve, objective and constraint evaluation,
//! backward sweep, design update, continuation scheduling, and convergence
//! control.

use crate::adjoint::{run_adjoint, volume_sensitivity_projected_field, AdjointState};
use crate::design::{brinkman, BrinkmanParams, DesignField};
use crate::forward::{
    run_forward, FlowState, ForwardProblem, ForwardRunConfig, HistoryMode, SolverError,
};
use crate::mma::MmaState;
use crate::objectives::{eval_g, ConstraintSpec, ObjectiveSpec};

/// Projection steepness continuation: a first stage of fixed length, then
/// doubling every `double_every` steps, or earlier whenever the objective
/// fluctuation settles; capped at `beta_max`.
#[derive(Clone, Debug, PartialEq)]
pub struct BetaSchedule {
    pub beta0: f64,
    pub beta_max: f64,
    pub first_stage: usize,
    pub double_every: usize,
    pub fluctuation_tol: f64,
    pub fluctuation_window: usize,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        Self {
            beta0: 1.0,
            beta_max: 1024.0,
            first_stage: 80,
            double_every: 80,
            fluctuation_tol: 1e-4,
            fluctuation_window: 5,
        }
    }
}

/// Loop-level limits and tolerances.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopControl {
    pub max_steps: usize,
    /// Relative objective change defining convergence.
    pub tolerance: f64,
    pub move_limit: f64,
}

impl Default for LoopControl {
    fn default() -> Self {
        Self { max_steps: 300, tolerance: 1e-6, move_limit: 0.2 }
    }
}

/// Forward-run settings of each optimization step.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSettings {
    pub steps: usize,
    /// Reuse terminal state and adjoint fields of the previous step as the
    /// initial/terminal values of the next one.
    pub warm_restart: bool,
    pub history: HistoryMode,
}

/// One row of the optimization log.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub j: f64,
    pub g: f64,
    pub beta: f64,
    pub v_max: f64,
    pub beta_event: bool,
    pub v_max_event: bool,
}

/// Full problem bundle for [`optimization_loop`].
pub struct OptimizationSetup<const D: usize> {
    /// Template problem; `kappa_ref` is refreshed from the design each step.
    pub problem: ForwardProblem<D>,
    pub design: DesignField<D>,
    pub objective: ObjectiveSpec<D>,
    pub constraint: ConstraintSpec,
    pub brinkman: BrinkmanParams,
    pub beta: BetaSchedule,
    pub control: LoopControl,
    pub run: RunSettings,
}

pub struct OptimizationResult<const D: usize> {
    pub design: DesignField<D>,
    pub history: Vec<StepRecord>,
    pub converged: bool,
    /// Set when the solver aborted mid-loop; the design and history hold the
    /// last good step.
    pub aborted: Option<SolverError>,
}

/// Runs the full design loop. `on_step` fires after every completed step
/// with the fresh record and the design that was evaluated (before the
/// update), so callers can stream logs and checkpoints.
pub fn optimization_loop<const D: usize>(
    setup: OptimizationSetup<D>,
    mut on_step: impl FnMut(&StepRecord, &DesignField<D>),
) -> OptimizationResult<D> {
    let OptimizationSetup {
        mut problem,
        mut design,
        objective,
        constraint,
        brinkman: brinkman_params,
        beta: beta_schedule,
        control,
        run,
    } = setup;

    let n_design = design.grid().len();
    let mut mma = MmaState::new(n_design, control.move_limit);
    let mut history: Vec<StepRecord> = Vec::new();
    let mut beta = beta_schedule.beta0;
    design.set_beta(beta);

    let mut carried_state: Option<FlowState<D>> = None;
    let mut carried_adjoint: Option<AdjointState<D>> = None;
    let mut previous_j: Option<f64> = None;
    let mut previous_v_max: Option<f64> = None;
    let mut stage_start = 0usize; // step index the current beta stage began at
    let mut first_stage_done = false;
    let mut quiet_steps = 0usize; // consecutive low-fluctuation steps
    let mut converged = false;
    let mut aborted = None;

    for step in 0..control.max_steps {
        // Continuation events act at the start of a step.
        let mut beta_event = false;
        if step > 0 && beta < beta_schedule.beta_max {
            let stage_len = if first_stage_done {
                beta_schedule.double_every
            } else {
                beta_schedule.first_stage
            };
            let stage_elapsed = step - stage_start;
            if stage_elapsed >= stage_len || quiet_steps >= beta_schedule.fluctuation_window {
                beta = (beta * 2.0).min(beta_schedule.beta_max);
                design.set_beta(beta);
                beta_event = true;
                first_stage_done = true;
                stage_start = step;
                quiet_steps = 0;
                previous_j = None; // the objective jumps; restart the trackers
            }
        }
        let v_max = constraint.v_max_at(step);
        let v_max_event = previous_v_max.is_some_and(|v| v != v_max);
        previous_v_max = Some(v_max);
        if v_max_event {
            previous_j = None;
        }

        // Forward solve on the current physical density.
        problem.kappa_ref = design
            .projected()
            .iter()
            .map(|&g| brinkman(g, &brinkman_params).expect("projected density in [0, 1]"))
            .collect();
        let initial = match (&carried_state, run.warm_restart) {
            (Some(s), true) => s.clone(),
            _ => FlowState::quiescent(&problem.analysis),
        };
        let cfg = ForwardRunConfig { n_total: run.steps, history: run.history };
        let forward = match run_forward(&problem, &objective, &cfg, initial) {
            Ok(f) => f,
            Err(e) => {
                aborted = Some(e);
                break;
            }
        };
        let j = forward.objective;
        let g = eval_g(design.projected(), v_max);

        // Backward sweep and chain rule.
        let adjoint = match run_adjoint(
            &problem,
            &objective,
            &forward.history,
            design.projected(),
            &brinkman_params,
            run.steps,
            if run.warm_restart { carried_adjoint.as_ref() } else { None },
        ) {
            Ok(a) => a,
            Err(e) => {
                aborted = Some(e);
                break;
            }
        };
        let dj_raw = design.chain_rule(&adjoint.sensitivity_projected);
        let dg_raw = design.chain_rule(&volume_sensitivity_projected_field(n_design, v_max));

        let record = StepRecord { step, j, g, beta, v_max, beta_event, v_max_event };
        on_step(&record, &design);
        history.push(record);

        // Convergence and fluctuation tracking.
        if let Some(jp) = previous_j {
            let rel = if jp != 0.0 { ((j - jp) / jp).abs() } else { (j - jp).abs() };
            if rel <= control.tolerance
                && g <= 1e-6
                && beta >= beta_schedule.beta_max
            {
                converged = true;
            }
            if rel < beta_schedule.fluctuation_tol {
                quiet_steps += 1;
            } else {
                quiet_steps = 0;
            }
        }
        previous_j = Some(j);
        if converged {
            break;
        }

        if run.warm_restart {
            carried_state = Some(forward.state);
            carried_adjoint = Some(adjoint.terminal);
        }

        // Objective gradient scaled to unit magnitude keeps the subproblem
        // well-conditioned across the wide range of raw objective scales.
        let scale = dj_raw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let df0: Vec<f64> = if scale > 0.0 {
            dj_raw.iter().map(|v| v / scale).collect()
        } else {
            dj_raw.clone()
        };
        match mma.update(design.raw(), &df0, g, &dg_raw) {
            Ok(new_raw) => design.set_raw(&new_raw),
            Err(e) => {
                log::error!("design update failed: {e}");
                aborted = Some(SolverError::NonFinite { step });
                break;
            }
        }
    }

    OptimizationResult { design, history, converged, aborted }
}

/// Canonical CSV rendering of the optimization log. Timing is deliberately
/// excluded so identical configurations reproduce the file bit for bit.
pub fn history_csv(history: &[StepRecord]) -> String {
    let mut out = String::from("step,j,g,beta,v_max,beta_event,v_max_event\n");
    for r in history {
        out.push_str(&format!(
            "{},{:.12e},{:.12e},{:.12e},{:.12e},{},{}\n",
            r.step,
            r.j,
            r.g,
            r.beta,
            r.v_max,
            r.beta_event as u8,
            r.v_max_event as u8
        ));
    }
    out
}
