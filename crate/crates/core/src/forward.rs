//! Forward solver: the lattice kinetic time step with moving-body
//! penalization.
//!
//! One step is: evaluate the rigid transform at the new time level, scatter
//! the Brinkman coefficient and solid velocity onto the analysis grid, stream
//! equilibrium moments from the previous macroscopic state, blend the
//! velocity toward the solid velocity through the penalization denominator,
//! then overwrite boundary values. Populations are never stored.
//!
//! Parallelism: stream-collide runs data-parallel over grid lines reading
//! only the previous time level; penalization is node-local. The time loop
//! itself is sequential.

use crate::boundary::BoundarySet;
use crate::grid::{ScalarField, TensorField, UniformGrid, VectorField};
use crate::lattice::{equilibrium, velocity_gradient_field, LatticeModel};
use crate::motion::MotionSpec;
use crate::objectives::ObjectiveSpec;
use crate::overlap::{build_snapshot, KernelKind, OverlapSnapshot};
use rayon::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("solver diverged at step {step}: max |u| = {max_u:.3e} exceeds {limit}")]
    Diverged { step: usize, max_u: f64, limit: f64 },
    #[error("non-finite field value at step {step}")]
    NonFinite { step: usize },
    #[error("history does not hold level {level}")]
    MissingHistory { level: usize },
}

/// Macroscopic state on the analysis grid.
#[derive(Clone, Debug)]
pub struct FlowState<const D: usize> {
    pub rho: ScalarField<D>,
    pub u: VectorField<D>,
}

impl<const D: usize> FlowState<D> {
    /// Quiescent fluid: unit density, zero velocity.
    pub fn quiescent(grid: &UniformGrid<D>) -> Self {
        Self { rho: ScalarField::constant(grid, 1.0), u: VectorField::zeros(grid) }
    }
}

/// Everything a forward step needs besides the state itself.
#[derive(Clone, Debug)]
pub struct ForwardProblem<const D: usize> {
    pub analysis: UniformGrid<D>,
    pub design: UniformGrid<D>,
    pub lattice: LatticeModel<D>,
    pub motion: MotionSpec<D>,
    pub kernel: KernelKind,
    pub boundaries: BoundarySet<D>,
    /// Equilibrium gradient-term coefficient (sets the viscosity).
    pub a_param: f64,
    /// Brinkman coefficient per design node (already interpolated from the
    /// physical density).
    pub kappa_ref: Vec<f64>,
    /// Optional fixed solid on the analysis grid (zero velocity).
    pub static_kappa: Option<ScalarField<D>>,
    /// Divergence guard on the velocity magnitude.
    pub max_velocity: f64,
}

/// Reusable per-step buffers.
pub struct StepScratch<const D: usize> {
    grad: TensorField<D>,
    rho_star: ScalarField<D>,
    u_star: VectorField<D>,
    pub snap: OverlapSnapshot<D>,
}

impl<const D: usize> StepScratch<D> {
    pub fn new(grid: &UniformGrid<D>) -> Self {
        Self {
            grad: TensorField::zeros(grid),
            rho_star: ScalarField::zeros(grid),
            u_star: VectorField::zeros(grid),
            snap: OverlapSnapshot::zeros(grid),
        }
    }
}

fn shift_index(i: usize, back: i32, n: usize, periodic: bool) -> usize {
    let j = i as isize - back as isize;
    if periodic {
        j.rem_euclid(n as isize) as usize
    } else {
        j.clamp(0, n as isize - 1) as usize
    }
}

impl<const D: usize> ForwardProblem<D> {
    pub fn periodic(&self) -> [bool; D] {
        self.boundaries.periodic_axes()
    }

    /// Physical time of a step level (`dt = dx` in lattice units).
    pub fn time_of_level(&self, level: usize) -> f64 {
        level as f64 * self.analysis.dx()
    }

    /// Moving-body snapshot at a step level.
    pub fn snapshot_at(&self, level: usize, snap: &mut OverlapSnapshot<D>) {
        let t = self.time_of_level(level);
        let frame = self.motion.frame(t);
        build_snapshot(
            &self.design,
            &self.analysis,
            &frame,
            self.kernel,
            &self.kappa_ref,
            t,
            snap,
        );
    }

    /// Streams equilibrium moments from the previous state: for every node,
    /// the new provisional density/velocity are the moments of the
    /// equilibrium values carried in from the upstream neighbors.
    pub fn stream_collide(
        &self,
        state: &FlowState<D>,
        grad: &TensorField<D>,
        rho_out: &mut ScalarField<D>,
        u_out: &mut VectorField<D>,
    ) {
        let n = self.analysis.extents();
        let n0 = n[0];
        let periodic = self.periodic();
        let q = self.lattice.q();
        let dx = self.analysis.dx();
        let a_param = self.a_param;
        let rho_in = state.rho.as_slice();
        let u_in = state.u.as_slice();
        let grad_in = grad.as_slice();

        let mut strides = [1usize; D];
        for a in 1..D {
            strides[a] = strides[a - 1] * n[a - 1];
        }

        rho_out
            .as_mut_slice()
            .par_chunks_mut(n0)
            .zip(u_out.as_mut_slice().par_chunks_mut(n0))
            .enumerate()
            .for_each(|(line, (rho_row, u_row))| {
                // Decode the fixed indices of this x-line once.
                let mut rest = [0usize; D];
                let mut rem = line;
                for a in 1..D {
                    rest[a] = rem % n[a];
                    rem /= n[a];
                }
                // Upstream partial flat index per direction (axes >= 1).
                let mut partial = [0usize; 32];
                for i in 0..q {
                    let c = self.lattice.velocity(i);
                    let mut p = 0;
                    for a in 1..D {
                        p += shift_index(rest[a], c[a], n[a], periodic[a]) * strides[a];
                    }
                    partial[i] = p;
                }
                for x in 0..n0 {
                    let mut rho_acc = 0.0;
                    let mut u_acc = [0.0; D];
                    for i in 0..q {
                        let c = self.lattice.velocity(i);
                        let up = partial[i] + shift_index(x, c[0], n0, periodic[0]);
                        let e = equilibrium(
                            &self.lattice,
                            i,
                            rho_in[up],
                            &u_in[up],
                            &grad_in[up],
                            a_param,
                            dx,
                        );
                        rho_acc += e;
                        for a in 0..D {
                            u_acc[a] += c[a] as f64 * e;
                        }
                    }
                    rho_row[x] = rho_acc;
                    u_row[x] = u_acc;
                }
            });
    }

    /// Velocity blend toward the solid velocity:
    /// `u = (u* + kappa u_s) / (1 + kappa + kappa_static)`, `rho = rho*`.
    /// Returns the largest velocity magnitude for the divergence guard.
    pub fn apply_penalization(
        &self,
        rho_star: &ScalarField<D>,
        u_star: &VectorField<D>,
        snap: &OverlapSnapshot<D>,
        rho: &mut ScalarField<D>,
        u: &mut VectorField<D>,
    ) -> f64 {
        rho.as_mut_slice().copy_from_slice(rho_star.as_slice());
        let kappa = snap.kappa.as_slice();
        let us = snap.u_s.as_slice();
        let stat = self.static_kappa.as_ref().map(|f| f.as_slice());
        u.as_mut_slice()
            .par_iter_mut()
            .enumerate()
            .map(|(f, out)| {
                let ks = stat.map_or(0.0, |s| s[f]);
                let denom = 1.0 + kappa[f] + ks;
                let mut norm2 = 0.0;
                for a in 0..D {
                    out[a] = (u_star[f][a] + kappa[f] * us[f][a]) / denom;
                    norm2 += out[a] * out[a];
                }
                norm2
            })
            .reduce(|| 0.0, f64::max)
            .sqrt()
    }

    /// One full time step onto `level` (the state must currently hold
    /// `level - 1`). Returns the max velocity magnitude seen.
    pub fn step(
        &self,
        state: &mut FlowState<D>,
        scratch: &mut StepScratch<D>,
        level: usize,
    ) -> Result<f64, SolverError> {
        self.snapshot_at(level, &mut scratch.snap);
        velocity_gradient_field(&state.u, &self.analysis, self.periodic(), &mut scratch.grad);
        // Double-buffer swap: stream into the scratch fields, then write the
        // penalized result back into the state.
        let (rho_star, u_star) = (&mut scratch.rho_star, &mut scratch.u_star);
        self.stream_collide(state, &scratch.grad, rho_star, u_star);
        let max_u =
            self.apply_penalization(rho_star, u_star, &scratch.snap, &mut state.rho, &mut state.u);
        self.boundaries.apply(&self.analysis, &mut state.rho, &mut state.u);
        if !max_u.is_finite() {
            return Err(SolverError::NonFinite { step: level });
        }
        if max_u > self.max_velocity {
            return Err(SolverError::Diverged { step: level, max_u, limit: self.max_velocity });
        }
        Ok(max_u)
    }
}

/// How the per-level velocity history is kept for the backward sweep.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum HistoryMode {
    /// No history (plain simulation).
    None,
    /// Every level, 32-bit components.
    DenseF32,
    /// Every level, full precision.
    DenseF64,
    /// Full states every `stride` levels; intermediate velocities are
    /// recomputed by re-running the forward segment during the sweep.
    Checkpoint { stride: usize },
}

/// Recorded velocity history of one forward run.
pub struct History<const D: usize> {
    pub mode: HistoryMode,
    n_nodes: usize,
    levels: usize,
    dense32: Vec<f32>,
    dense64: Vec<f64>,
    checkpoints: Vec<FlowState<D>>,
}

impl<const D: usize> History<D> {
    pub fn new(mode: HistoryMode, grid: &UniformGrid<D>, n_total: usize) -> Self {
        let n_nodes = grid.len();
        let levels = n_total + 1;
        let (dense32, dense64) = match mode {
            HistoryMode::DenseF32 => (vec![0f32; levels * n_nodes * D], Vec::new()),
            HistoryMode::DenseF64 => (Vec::new(), vec![0f64; levels * n_nodes * D]),
            _ => (Vec::new(), Vec::new()),
        };
        Self { mode, n_nodes, levels, dense32, dense64, checkpoints: Vec::new() }
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn record(&mut self, level: usize, state: &FlowState<D>) {
        match self.mode {
            HistoryMode::None => {}
            HistoryMode::DenseF32 => {
                let base = level * self.n_nodes * D;
                for (k, u) in state.u.as_slice().iter().enumerate() {
                    for a in 0..D {
                        self.dense32[base + k * D + a] = u[a] as f32;
                    }
                }
            }
            HistoryMode::DenseF64 => {
                let base = level * self.n_nodes * D;
                for (k, u) in state.u.as_slice().iter().enumerate() {
                    for a in 0..D {
                        self.dense64[base + k * D + a] = u[a];
                    }
                }
            }
            HistoryMode::Checkpoint { stride } => {
                if level % stride == 0 {
                    self.checkpoints.push(state.clone());
                }
            }
        }
    }

    /// Loads a dense level into `out`; errors in checkpoint mode (the sweep
    /// regenerates those levels itself).
    pub fn load_velocity(&self, level: usize, out: &mut VectorField<D>) -> Result<(), SolverError> {
        if level >= self.levels {
            return Err(SolverError::MissingHistory { level });
        }
        let base = level * self.n_nodes * D;
        match self.mode {
            HistoryMode::DenseF32 => {
                for (k, u) in out.as_mut_slice().iter_mut().enumerate() {
                    for a in 0..D {
                        u[a] = self.dense32[base + k * D + a] as f64;
                    }
                }
                Ok(())
            }
            HistoryMode::DenseF64 => {
                for (k, u) in out.as_mut_slice().iter_mut().enumerate() {
                    for a in 0..D {
                        u[a] = self.dense64[base + k * D + a];
                    }
                }
                Ok(())
            }
            _ => Err(SolverError::MissingHistory { level }),
        }
    }

    pub fn checkpoint(&self, segment: usize) -> Option<&FlowState<D>> {
        self.checkpoints.get(segment)
    }
}

/// Run-length bookkeeping for one forward solve.
#[derive(Clone, Debug)]
pub struct ForwardRunConfig {
    pub n_total: usize,
    pub history: HistoryMode,
}

/// Outcome of a forward run.
pub struct RunResult<const D: usize> {
    pub state: FlowState<D>,
    /// Windowed objective value (minimization sign).
    pub objective: f64,
    /// Per-level region mean of the raw integrand, all levels `0..=n_total`.
    pub series: Vec<f64>,
    pub history: History<D>,
    pub max_velocity_seen: f64,
    pub clipped_kernel: usize,
}

/// Runs the forward problem from `initial`, accumulating the objective and
/// recording history. `on_level` fires after every completed level (including
/// level zero) with the current state.
pub fn run_forward_with<const D: usize>(
    problem: &ForwardProblem<D>,
    objective: &ObjectiveSpec<D>,
    cfg: &ForwardRunConfig,
    initial: FlowState<D>,
    mut on_level: impl FnMut(usize, &FlowState<D>),
) -> Result<RunResult<D>, SolverError> {
    let mut state = initial;
    let mut scratch = StepScratch::new(&problem.analysis);
    let mut history = History::new(cfg.history, &problem.analysis, cfg.n_total);
    let nodes = objective.node_set(&problem.analysis);
    let mut series = Vec::with_capacity(cfg.n_total + 1);
    let mut max_seen = 0.0f64;
    let mut clipped = 0;

    history.record(0, &state);
    series.push(objective.instantaneous_mean(&nodes, &state.rho, &state.u));
    on_level(0, &state);

    for level in 1..=cfg.n_total {
        let max_u = problem.step(&mut state, &mut scratch, level)?;
        max_seen = max_seen.max(max_u);
        clipped += scratch.snap.clipped;
        history.record(level, &state);
        series.push(objective.instantaneous_mean(&nodes, &state.rho, &state.u));
        on_level(level, &state);
    }
    if clipped > 0 {
        log::warn!("kernel support left the analysis grid {clipped} times (contributions clipped)");
    }
    if max_seen > 0.3 {
        log::warn!("max |u| = {max_seen:.3} exceeds the low-Mach guideline of 0.3");
    }

    let objective_value = objective.from_series(&series);
    Ok(RunResult {
        state,
        objective: objective_value,
        series,
        history,
        max_velocity_seen: max_seen,
        clipped_kernel: clipped,
    })
}

pub fn run_forward<const D: usize>(
    problem: &ForwardProblem<D>,
    objective: &ObjectiveSpec<D>,
    cfg: &ForwardRunConfig,
    initial: FlowState<D>,
) -> Result<RunResult<D>, SolverError> {
    run_forward_with(problem, objective, cfg, initial, |_, _| {})
}
