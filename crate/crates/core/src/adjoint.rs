//! Backward-in-time adjoint sweep and design sensitivity assembly.
//!
//! The sweep is the exact discrete transpose of the forward step, so the
//! design gradient it produces matches finite differences of the full
//! pipeline to roundoff and finite-difference truncation. One backward step
//! mirrors the forward step stage by stage, in reverse order:
//!
//! * boundary transpose — adjoint components of overwritten values are zeroed;
//! * penalization transpose — the velocity adjoint is divided by the same
//!   `1 + kappa` denominator the forward blend used (this is the closed-form
//!   resolution of the update that is implicit in the adjoint velocity);
//! * streaming transpose — the scalar `rho_adj + c_i . u_adj` is gathered
//!   from the downstream neighbors and its weighted moments (1, c, c c)
//!   become the provisional fields of the earlier level;
//! * equilibrium transpose — the moments recombine locally with the forward
//!   velocity of that level, the second moment feeds the transposed gradient
//!   stencil, and the objective sources are added.
//!
//! The moving-body fields are deterministic in time and are rebuilt from the
//! motion law during the sweep instead of being stored.

use crate::design::BrinkmanParams;
use crate::forward::{FlowState, ForwardProblem, History, HistoryMode, SolverError, StepScratch};
use crate::grid::{ScalarField, TensorField, UniformGrid, VectorField};
use crate::lattice::gradient_transpose_accumulate;
use crate::objectives::ObjectiveSpec;
use crate::overlap::{map_to_design, OverlapSnapshot};
use rayon::prelude::*;

/// Adjoint fields on the analysis grid: the gradients of the objective with
/// respect to the post-boundary state of one level, plus the latest weighted
/// second moment of the streamed adjoint scalar.
#[derive(Clone, Debug)]
pub struct AdjointState<const D: usize> {
    pub rho: ScalarField<D>,
    pub u: VectorField<D>,
    pub s: TensorField<D>,
}

impl<const D: usize> AdjointState<D> {
    pub fn zeros(grid: &UniformGrid<D>) -> Self {
        Self {
            rho: ScalarField::zeros(grid),
            u: VectorField::zeros(grid),
            s: TensorField::zeros(grid),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.rho.as_slice().iter().all(|v| v.is_finite())
            && self.u.as_slice().iter().all(|u| u.iter().all(|v| v.is_finite()))
    }
}

/// Design sensitivity on the design grid (with respect to the projected
/// density) plus the adjoint fields left at time zero, which warm restarts
/// feed back in as the next terminal condition.
pub struct AdjointOutcome<const D: usize> {
    pub sensitivity_projected: Vec<f64>,
    pub terminal: AdjointState<D>,
}

/// Closed form of the velocity update that is implicit in the adjoint
/// velocity: `u (1 + kappa) = moment + source_moment`.
pub fn resolve_velocity_update<const D: usize>(
    moment: [f64; D],
    kappa: f64,
    source_moment: [f64; D],
) -> [f64; D] {
    let mut out = [0.0; D];
    for a in 0..D {
        out[a] = (moment[a] + source_moment[a]) / (1.0 + kappa);
    }
    out
}

fn preimage_axis(y: usize, c: i32, n: usize, periodic: bool) -> ([usize; 2], usize) {
    let mut out = [0usize; 2];
    if periodic {
        out[0] = (y as isize + c as isize).rem_euclid(n as isize) as usize;
        return (out, 1);
    }
    if c == 0 {
        out[0] = y;
        return (out, 1);
    }
    let mut count = 0;
    let t = y as isize + c as isize;
    if t >= 0 && t < n as isize {
        out[count] = t as usize;
        count += 1;
    }
    // Clamped streaming absorbs the face node's own out-of-range upstream.
    if y == 0 && c == 1 {
        out[count] = 0;
        count += 1;
    }
    if y == n - 1 && c == -1 {
        out[count] = n - 1;
        count += 1;
    }
    (out, count)
}

/// Streaming transpose: gathers `lam_rho + c_i . lam_u` over the preimage of
/// each node under the forward upstream map and accumulates the weighted
/// moments (1, c, c c). The preimage is the downstream neighbor in the
/// interior and picks up the extra clamped contributions at non-periodic
/// faces.
pub fn adjoint_moments<const D: usize>(
    problem: &ForwardProblem<D>,
    lam_rho: &ScalarField<D>,
    lam_u: &VectorField<D>,
    rho0: &mut ScalarField<D>,
    u0: &mut VectorField<D>,
    s0: &mut TensorField<D>,
) {
    let n = problem.analysis.extents();
    let n0 = n[0];
    let periodic = problem.periodic();
    let q = problem.lattice.q();
    let lam_rho_in = lam_rho.as_slice();
    let lam_u_in = lam_u.as_slice();

    let mut strides = [1usize; D];
    for a in 1..D {
        strides[a] = strides[a - 1] * n[a - 1];
    }

    rho0.as_mut_slice()
        .par_chunks_mut(n0)
        .zip(u0.as_mut_slice().par_chunks_mut(n0).zip(s0.as_mut_slice().par_chunks_mut(n0)))
        .enumerate()
        .for_each(|(line, (rho_row, (u_row, s_row)))| {
            let mut rest = [0usize; D];
            let mut rem = line;
            for a in 1..D {
                rest[a] = rem % n[a];
                rem /= n[a];
            }
            // Partial flat indices of the rest-axis preimages per direction.
            let mut partials = [[0usize; 4]; 32];
            let mut partial_count = [0usize; 32];
            for i in 0..q {
                let c = problem.lattice.velocity(i);
                let mut count = 1usize;
                let mut flats = [0usize; 4];
                for a in 1..D {
                    let (pre, cnt) = preimage_axis(rest[a], c[a], n[a], periodic[a]);
                    let mut expanded = [0usize; 4];
                    let mut k = 0;
                    for existing in flats.iter().take(count) {
                        for p in pre.iter().take(cnt) {
                            expanded[k] = existing + p * strides[a];
                            k += 1;
                        }
                    }
                    flats = expanded;
                    count = k;
                }
                partials[i] = flats;
                partial_count[i] = count;
            }
            for x in 0..n0 {
                let mut rho_acc = 0.0;
                let mut u_acc = [0.0; D];
                let mut s_acc = [[0.0; D]; D];
                for i in 0..q {
                    let c = problem.lattice.velocity(i);
                    let w = problem.lattice.weight(i);
                    let (xpre, xcnt) = preimage_axis(x, c[0], n0, periodic[0]);
                    let mut psi = 0.0;
                    for p in 0..partial_count[i] {
                        for xk in 0..xcnt {
                            let flat = partials[i][p] + xpre[xk];
                            let mut v = lam_rho_in[flat];
                            for a in 0..D {
                                v += c[a] as f64 * lam_u_in[flat][a];
                            }
                            psi += v;
                        }
                    }
                    let wpsi = w * psi;
                    rho_acc += wpsi;
                    for a in 0..D {
                        let ca = c[a] as f64;
                        u_acc[a] += ca * wpsi;
                        for b in 0..D {
                            s_acc[a][b] += ca * c[b] as f64 * wpsi;
                        }
                    }
                }
                rho_row[x] = rho_acc;
                u_row[x] = u_acc;
                s_row[x] = s_acc;
            }
        });
}

/// Scratch buffers reused across backward steps.
pub struct AdjointScratch<const D: usize> {
    lam_rho: ScalarField<D>,
    lam_u: VectorField<D>,
    rho0: ScalarField<D>,
    u0: VectorField<D>,
    s0: TensorField<D>,
    product: ScalarField<D>,
    pub snap: OverlapSnapshot<D>,
}

impl<const D: usize> AdjointScratch<D> {
    pub fn new(grid: &UniformGrid<D>) -> Self {
        Self {
            lam_rho: ScalarField::zeros(grid),
            lam_u: VectorField::zeros(grid),
            rho0: ScalarField::zeros(grid),
            u0: VectorField::zeros(grid),
            s0: TensorField::zeros(grid),
            product: ScalarField::zeros(grid),
            snap: OverlapSnapshot::zeros(grid),
        }
    }
}

/// One backward step from the adjoint of level `level + 1` to the adjoint of
/// `level`, without objective sources. `u_prev` is the forward velocity of
/// `level`; the snapshot in `scratch.snap` must already hold level
/// `level + 1`. Leaves the boundary-transposed, penalization-divided velocity
/// adjoint of the upper level in the scratch for sensitivity accumulation.
pub fn adjoint_step_without_sources<const D: usize>(
    problem: &ForwardProblem<D>,
    next: &AdjointState<D>,
    u_prev: &VectorField<D>,
    scratch: &mut AdjointScratch<D>,
    out: &mut AdjointState<D>,
) {
    let grid = &problem.analysis;
    // Boundary transpose.
    scratch.lam_rho.as_mut_slice().copy_from_slice(next.rho.as_slice());
    scratch.lam_u.as_mut_slice().copy_from_slice(next.u.as_slice());
    problem.boundaries.zero_adjoint(grid, &mut scratch.lam_rho, &mut scratch.lam_u);
    // Penalization transpose with the same denominator as the forward blend.
    let kappa = scratch.snap.kappa.as_slice();
    let stat = problem.static_kappa.as_ref().map(|f| f.as_slice());
    scratch.lam_u.as_mut_slice().par_iter_mut().enumerate().for_each(|(f, lu)| {
        let denom = 1.0 + kappa[f] + stat.map_or(0.0, |s| s[f]);
        for a in 0..D {
            lu[a] /= denom;
        }
    });
    // Streaming transpose.
    adjoint_moments(
        problem,
        &scratch.lam_rho,
        &scratch.lam_u,
        &mut scratch.rho0,
        &mut scratch.u0,
        &mut scratch.s0,
    );
    // Equilibrium transpose: local recombination with the forward velocity
    // of the lower level, then the transposed gradient stencil.
    let rho0 = scratch.rho0.as_slice();
    let u0 = scratch.u0.as_slice();
    let s0 = scratch.s0.as_slice();
    out.rho.as_mut_slice().copy_from_slice(rho0);
    let u_prev_in = u_prev.as_slice();
    out.u.as_mut_slice().par_iter_mut().enumerate().for_each(|(f, lu)| {
        let uf = u_prev_in[f];
        for a in 0..D {
            let mut v = 3.0 * u0[f][a] - 3.0 * rho0[f] * uf[a];
            for b in 0..D {
                v += 9.0 * s0[f][a][b] * uf[b];
            }
            lu[a] = v;
        }
    });
    gradient_transpose_accumulate(
        &scratch.s0,
        grid,
        problem.periodic(),
        2.0 * grid.dx() * problem.a_param,
        &mut out.u,
    );
    out.s.as_mut_slice().copy_from_slice(s0);
}

/// Forward velocity reader able to serve arbitrary levels from dense or
/// checkpointed history.
struct VelocityCursor<'a, const D: usize> {
    problem: &'a ForwardProblem<D>,
    history: &'a History<D>,
    n_total: usize,
    slots: [usize; 2],
    bufs: [VectorField<D>; 2],
    // Checkpoint replay state.
    segment: Vec<VectorField<D>>,
    segment_start: usize,
    segment_len: usize,
    replay: Option<(FlowState<D>, StepScratch<D>)>,
}

impl<'a, const D: usize> VelocityCursor<'a, D> {
    fn new(problem: &'a ForwardProblem<D>, history: &'a History<D>, n_total: usize) -> Self {
        let grid = &problem.analysis;
        Self {
            problem,
            history,
            n_total,
            slots: [usize::MAX; 2],
            bufs: [VectorField::zeros(grid), VectorField::zeros(grid)],
            segment: Vec::new(),
            segment_start: usize::MAX,
            segment_len: 0,
            replay: None,
        }
    }

    /// Makes levels `level` and `level + 1` resident.
    fn ensure(&mut self, level: usize) -> Result<(), SolverError> {
        match self.history.mode {
            HistoryMode::DenseF32 | HistoryMode::DenseF64 => {
                for want in [level, level + 1] {
                    if self.slots.contains(&want) {
                        continue;
                    }
                    let evict =
                        if self.slots[0] == level || self.slots[0] == level + 1 { 1 } else { 0 };
                    self.history.load_velocity(want, &mut self.bufs[evict])?;
                    self.slots[evict] = want;
                }
                Ok(())
            }
            HistoryMode::Checkpoint { stride } => {
                let seg = level / stride;
                let start = seg * stride;
                if self.segment_start == start {
                    return Ok(());
                }
                let end = (start + stride).min(self.n_total);
                let checkpoint =
                    self.history.checkpoint(seg).ok_or(SolverError::MissingHistory { level })?;
                if self.segment.len() < stride + 1 {
                    self.segment.resize(stride + 1, VectorField::zeros(&self.problem.analysis));
                }
                if self.replay.is_none() {
                    self.replay =
                        Some((checkpoint.clone(), StepScratch::new(&self.problem.analysis)));
                }
                let (state, scratch) = self.replay.as_mut().unwrap();
                state.rho.as_mut_slice().copy_from_slice(checkpoint.rho.as_slice());
                state.u.as_mut_slice().copy_from_slice(checkpoint.u.as_slice());
                self.segment[0].as_mut_slice().copy_from_slice(state.u.as_slice());
                for l in start + 1..=end {
                    self.problem
                        .step(state, scratch, l)
                        .map_err(|_| SolverError::MissingHistory { level: l })?;
                    self.segment[l - start].as_mut_slice().copy_from_slice(state.u.as_slice());
                }
                self.segment_start = start;
                self.segment_len = end - start + 1;
                Ok(())
            }
            HistoryMode::None => Err(SolverError::MissingHistory { level }),
        }
    }

    fn get(&self, level: usize) -> &VectorField<D> {
        match self.history.mode {
            HistoryMode::Checkpoint { .. } => {
                debug_assert!(
                    level >= self.segment_start && level < self.segment_start + self.segment_len
                );
                &self.segment[level - self.segment_start]
            }
            _ => {
                let slot = self.slots.iter().position(|&s| s == level).expect("level resident");
                &self.bufs[slot]
            }
        }
    }
}

/// Runs the backward sweep over a completed forward history and assembles
/// the design sensitivity with respect to the projected density.
///
/// `terminal` seeds the adjoint at the final time (warm restart); the cold
/// start is all zeros. The per-level contribution to the sensitivity pairs
/// the penalization-transposed velocity adjoint with the slip `u_s - u` on
/// the analysis grid and pulls the product back to the moved design points
/// through the shared kernel, where the Brinkman derivative scales it.
pub fn run_adjoint<const D: usize>(
    problem: &ForwardProblem<D>,
    objective: &ObjectiveSpec<D>,
    history: &History<D>,
    gamma_projected: &[f64],
    brinkman: &BrinkmanParams,
    n_total: usize,
    terminal: Option<&AdjointState<D>>,
) -> Result<AdjointOutcome<D>, SolverError> {
    let grid = &problem.analysis;
    assert_eq!(gamma_projected.len(), problem.design.len());
    let sources = objective.sources(grid);
    let mut scratch = AdjointScratch::new(grid);
    let mut cursor = VelocityCursor::new(problem, history, n_total);

    let mut current = match terminal {
        Some(t) => t.clone(),
        None => AdjointState::zeros(grid),
    };
    sources.accumulate(n_total, &mut current.rho, &mut current.u);

    let kappa_deriv: Vec<f64> = gamma_projected
        .iter()
        .map(|&g| crate::design::brinkman_derivative(g, brinkman).expect("projected in [0,1]"))
        .collect();
    let mut accumulated = vec![0.0; problem.design.len()];
    let mut next = AdjointState::zeros(grid);

    for level in (0..n_total).rev() {
        let upper = level + 1;
        problem.snapshot_at(upper, &mut scratch.snap);
        cursor.ensure(level)?;

        // Boundary + penalization transpose feed both the sensitivity and the
        // streaming transpose; the step leaves them in the scratch.
        adjoint_step_without_sources(problem, &current, cursor.get(level), &mut scratch, &mut next);

        // Per-level design sensitivity: dJ/dkappa = lam_u_pen . (u_s - u).
        let u_upper = cursor.get(upper).as_slice();
        let lam_u_pen = scratch.lam_u.as_slice();
        let us = scratch.snap.u_s.as_slice();
        scratch.product.as_mut_slice().par_iter_mut().enumerate().for_each(|(f, p)| {
            let mut acc = 0.0;
            for a in 0..D {
                acc += lam_u_pen[f][a] * (us[f][a] - u_upper[f][a]);
            }
            *p = acc;
        });
        let frame = problem.motion.frame(problem.time_of_level(upper));
        let product = scratch.product.as_slice();
        map_to_design(
            &problem.design,
            grid,
            &frame,
            problem.kernel,
            |flat| product[flat],
            |design_flat, _, v| accumulated[design_flat] += v,
        );

        std::mem::swap(&mut current, &mut next);
        sources.accumulate(level, &mut current.rho, &mut current.u);
        if level % 256 == 0 && !current.is_finite() {
            return Err(SolverError::NonFinite { step: level });
        }
    }

    let sensitivity_projected: Vec<f64> =
        accumulated.iter().zip(&kappa_deriv).map(|(&a, &d)| a * d).collect();
    Ok(AdjointOutcome { sensitivity_projected, terminal: current })
}

/// Design gradient of the volume constraint with respect to the projected
/// density (uniform), ready for the filter/projection chain rule.
pub fn volume_sensitivity_projected_field(n_design: usize, v_max: f64) -> Vec<f64> {
    vec![crate::objectives::volume_sensitivity_projected(n_design, v_max); n_design]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::boundary::{BoundarySet, FaceCondition};
    use crate::lattice::LatticeModel;
    use crate::motion::{MotionSpec, RotationLaw, TranslationLaw};
    use crate::objectives::{ObjectiveKind, Region};
    use crate::overlap::KernelKind;

    fn small_problem(boundaries: BoundarySet<2>) -> ForwardProblem<2> {
        let analysis = UniformGrid::new([6, 5], 1.0);
        let design = UniformGrid::with_origin([3, 3], 1.0, [0.0, 0.0]);
        ForwardProblem {
            analysis,
            design,
            lattice: LatticeModel::d2q9(),
            motion: MotionSpec {
                pivot: [1.0, 1.0],
                rotation: RotationLaw::ConstantRate { period: 40.0 },
                translation: TranslationLaw::Fixed { base: [2.7, 2.2] },
                rotation_axis: 2,
            },
            kernel: KernelKind::Cosine,
            boundaries,
            a_param: 0.25,
            kappa_ref: vec![6.0, 3.0, 0.5, 2.0, 8.0, 1.0, 0.0, 4.0, 2.5],
            static_kappa: None,
            max_velocity: 0.5,
        }
    }

    fn rng(seed: u64) -> impl FnMut() -> f64 {
        let mut state = seed;
        move || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        }
    }

    #[test]
    fn closed_form_resolves_the_implicit_velocity_update() {
        // Small kappa: the fixed point of u <- m + sum_i w_i c_i
        // (-3 kappa c.u - s_i) converges and must land on the closed form.
        let model = LatticeModel::d2q9();
        let kappa = 0.5f64;
        let moment = [0.02, -0.01];
        let dj_df: Vec<f64> = (0..9).map(|i| 0.001 * (i as f64 - 4.0)).collect();
        let mut src = [0.0; 2];
        for i in 0..9 {
            let c = model.velocity(i);
            for a in 0..2 {
                src[a] += model.weight(i) * c[a] as f64 * (-dj_df[i]);
            }
        }
        let closed = resolve_velocity_update(moment, kappa, src);
        let mut u = [0.0; 2];
        for _ in 0..2000 {
            let mut next = moment;
            for i in 0..9 {
                let c = model.velocity(i);
                let cu: f64 = (0..2).map(|a| c[a] as f64 * u[a]).sum();
                for a in 0..2 {
                    next[a] += model.weight(i) * c[a] as f64 * (-3.0 * kappa * cu - dj_df[i]);
                }
            }
            u = next;
        }
        for a in 0..2 {
            assert!((closed[a] - u[a]).abs() < 1e-13, "{closed:?} vs {u:?}");
        }

        // Any kappa: the closed form satisfies the implicit equation.
        for kappa in [0.0, 1.0, 1000.0] {
            let v = resolve_velocity_update(moment, kappa, src);
            for a in 0..2 {
                let residual = moment[a] + src[a] - kappa * v[a] - v[a];
                assert!(residual.abs() < 1e-13);
            }
        }
        // kappa = 0 with no sources is the identity.
        assert_eq!(resolve_velocity_update([0.3, 0.4], 0.0, [0.0; 2]), [0.3, 0.4]);
        // Huge kappa annihilates the adjoint velocity.
        let v = resolve_velocity_update([0.3, 0.4], 1e12, [0.0; 2]);
        assert!(v[0].abs() < 1e-10 && v[1].abs() < 1e-10);
    }

    #[test]
    fn moments_of_uniform_adjoint_state() {
        // lam_rho = 1, lam_u = 0 on a periodic grid: psi_i = 1 everywhere, so
        // the moments are the lattice identities (1, 0, delta/3).
        let problem = small_problem(BoundarySet::all_periodic());
        let grid = &problem.analysis;
        let lam_rho = ScalarField::constant(grid, 1.0);
        let lam_u = VectorField::zeros(grid);
        let mut rho0 = ScalarField::zeros(grid);
        let mut u0 = VectorField::zeros(grid);
        let mut s0 = TensorField::zeros(grid);
        adjoint_moments(&problem, &lam_rho, &lam_u, &mut rho0, &mut u0, &mut s0);
        for f in 0..grid.len() {
            assert!((rho0[f] - 1.0).abs() < 1e-14);
            for a in 0..2 {
                assert!(u0[f][a].abs() < 1e-14);
                for b in 0..2 {
                    let expect = if a == b { 1.0 / 3.0 } else { 0.0 };
                    assert!((s0[f][a][b] - expect).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn zero_adjoint_state_stays_zero() {
        let problem = small_problem(BoundarySet::all_walls());
        let grid = &problem.analysis;
        let zero = AdjointState::zeros(grid);
        let mut out = AdjointState::zeros(grid);
        let mut scratch = AdjointScratch::new(grid);
        problem.snapshot_at(3, &mut scratch.snap);
        let u_prev = VectorField::zeros(grid);
        adjoint_step_without_sources(&problem, &zero, &u_prev, &mut scratch, &mut out);
        assert!(out.rho.as_slice().iter().all(|&v| v == 0.0));
        assert!(out.u.as_slice().iter().all(|u| u.iter().all(|&v| v == 0.0)));
    }

    /// Gold-standard transpose check: for random state, direction, and
    /// cotangent, `<lam, dF(s)[delta]>` from finite differences of the full
    /// forward step equals `<F^T lam, delta>` from one backward step.
    #[test]
    fn one_backward_step_is_the_transpose_of_one_forward_step() {
        let mut boundaries_mixed = BoundarySet::all_walls();
        boundaries_mixed.faces[1][1] =
            FaceCondition::PressureOutlet { rho: 1.0, tangential: [0.0, 0.0] };
        boundaries_mixed.faces[0][0] = FaceCondition::VelocityInlet { u: [0.02, 0.0] };
        for (name, boundaries) in [
            ("periodic", BoundarySet::all_periodic()),
            ("walls", BoundarySet::all_walls()),
            ("mixed", boundaries_mixed),
        ] {
            let problem = small_problem(boundaries);
            let grid = problem.analysis.clone();
            let nn = grid.len();
            let level = 3;
            let mut next = rng(0xfeed + name.len() as u64);

            let mut base = FlowState::quiescent(&grid);
            for f in 0..nn {
                base.rho[f] = 1.0 + 0.05 * next();
                base.u[f] = [0.05 * next(), 0.05 * next()];
            }
            let delta_rho: Vec<f64> = (0..nn).map(|_| next()).collect();
            let delta_u: Vec<[f64; 2]> = (0..nn).map(|_| [next(), next()]).collect();
            let mut lam = AdjointState::zeros(&grid);
            for f in 0..nn {
                lam.rho[f] = next();
                lam.u[f] = [next(), next()];
            }

            let step = |state: &FlowState<2>| {
                let mut s = state.clone();
                let mut scratch = StepScratch::new(&grid);
                problem.step(&mut s, &mut scratch, level).unwrap();
                s
            };
            let h = 1e-6;
            let mut plus = base.clone();
            let mut minus = base.clone();
            for f in 0..nn {
                plus.rho[f] += h * delta_rho[f];
                minus.rho[f] -= h * delta_rho[f];
                for a in 0..2 {
                    plus.u[f][a] += h * delta_u[f][a];
                    minus.u[f][a] -= h * delta_u[f][a];
                }
            }
            let sp = step(&plus);
            let sm = step(&minus);
            let mut fd = 0.0;
            for f in 0..nn {
                fd += lam.rho[f] * (sp.rho[f] - sm.rho[f]) / (2.0 * h);
                for a in 0..2 {
                    fd += lam.u[f][a] * (sp.u[f][a] - sm.u[f][a]) / (2.0 * h);
                }
            }

            let mut scratch = AdjointScratch::new(&grid);
            problem.snapshot_at(level, &mut scratch.snap);
            let mut back = AdjointState::zeros(&grid);
            adjoint_step_without_sources(&problem, &lam, &base.u, &mut scratch, &mut back);
            let mut paired = 0.0;
            for f in 0..nn {
                paired += back.rho[f] * delta_rho[f];
                for a in 0..2 {
                    paired += back.u[f][a] * delta_u[f][a];
                }
            }
            assert!(
                (fd - paired).abs() <= 1e-9 * paired.abs().max(1.0),
                "{name}: fd {fd} vs adjoint {paired}"
            );
        }
    }

    /// Same transpose check in 3D with the fifteen-velocity model.
    #[test]
    fn backward_step_transposes_forward_step_in_3d() {
        let analysis = UniformGrid::new([5, 4, 4], 1.0);
        let design = UniformGrid::with_origin([2, 2, 2], 1.0, [0.0, 0.0, 0.0]);
        let problem = ForwardProblem {
            analysis: analysis.clone(),
            design,
            lattice: LatticeModel::d3q15(),
            motion: MotionSpec {
                pivot: [0.5, 0.5, 0.5],
                rotation: RotationLaw::ConstantRate { period: 30.0 },
                translation: TranslationLaw::Fixed { base: [2.2, 1.8, 1.5] },
                rotation_axis: 2,
            },
            kernel: KernelKind::Cosine,
            boundaries: BoundarySet::all_walls(),
            a_param: 0.25,
            kappa_ref: vec![2.0; 8],
            static_kappa: None,
            max_velocity: 0.5,
        };
        let nn = analysis.len();
        let level = 2;
        let mut next = rng(0xabcdef);
        let mut base = FlowState::quiescent(&analysis);
        for f in 0..nn {
            base.rho[f] = 1.0 + 0.04 * next();
            base.u[f] = [0.04 * next(), 0.04 * next(), 0.04 * next()];
        }
        let delta: Vec<[f64; 4]> = (0..nn).map(|_| [next(), next(), next(), next()]).collect();
        let mut lam = AdjointState::zeros(&analysis);
        for f in 0..nn {
            lam.rho[f] = next();
            lam.u[f] = [next(), next(), next()];
        }
        let h = 1e-6;
        let mut plus = base.clone();
        let mut minus = base.clone();
        for f in 0..nn {
            plus.rho[f] += h * delta[f][0];
            minus.rho[f] -= h * delta[f][0];
            for a in 0..3 {
                plus.u[f][a] += h * delta[f][1 + a];
                minus.u[f][a] -= h * delta[f][1 + a];
            }
        }
        let step = |state: &FlowState<3>| {
            let mut s = state.clone();
            let mut scratch = StepScratch::new(&analysis);
            problem.step(&mut s, &mut scratch, level).unwrap();
            s
        };
        let sp = step(&plus);
        let sm = step(&minus);
        let mut fd = 0.0;
        for f in 0..nn {
            fd += lam.rho[f] * (sp.rho[f] - sm.rho[f]) / (2.0 * h);
            for a in 0..3 {
                fd += lam.u[f][a] * (sp.u[f][a] - sm.u[f][a]) / (2.0 * h);
            }
        }
        let mut scratch = AdjointScratch::new(&analysis);
        problem.snapshot_at(level, &mut scratch.snap);
        let mut back = AdjointState::zeros(&analysis);
        adjoint_step_without_sources(&problem, &lam, &base.u, &mut scratch, &mut back);
        let mut paired = 0.0;
        for f in 0..nn {
            paired += back.rho[f] * delta[f][0];
            for a in 0..3 {
                paired += back.u[f][a] * delta[f][1 + a];
            }
        }
        assert!((fd - paired).abs() <= 2e-9 * paired.abs().max(1.0), "fd {fd} vs adjoint {paired}");
    }

    #[test]
    fn kappa_max_zero_gives_zero_sensitivity() {
        use crate::forward::{run_forward, ForwardRunConfig};
        let problem = small_problem(BoundarySet::all_walls());
        let grid = problem.analysis.clone();
        let objective = ObjectiveSpec {
            kind: ObjectiveKind::RegionVelocity {
                region: Region::Boxed { min: [1, 1], max: [4, 3] },
                direction: [0.0, 1.0],
            },
            window: (2, 6),
        };
        let cfg = ForwardRunConfig { n_total: 6, history: HistoryMode::DenseF64 };
        let out = run_forward(&problem, &objective, &cfg, FlowState::quiescent(&grid)).unwrap();
        let gamma = vec![0.5; problem.design.len()];
        let zero_params = BrinkmanParams { kappa_max: 0.0, q: 0.1 };
        let adj =
            run_adjoint(&problem, &objective, &out.history, &gamma, &zero_params, 6, None).unwrap();
        assert!(adj.sensitivity_projected.iter().all(|&v| v == 0.0));
        assert!(adj.terminal.is_finite());
    }

    #[test]
    fn checkpoint_history_reproduces_dense_adjoint() {
        use crate::forward::{run_forward, ForwardRunConfig};
        let problem = small_problem(BoundarySet::all_walls());
        let grid = problem.analysis.clone();
        let objective = ObjectiveSpec {
            kind: ObjectiveKind::BoundaryPressure { faces: vec![(1, 0), (1, 1)] },
            window: (0, 9),
        };
        let gamma = vec![0.5; problem.design.len()];
        let params = BrinkmanParams::default();
        let mut initial = FlowState::quiescent(&grid);
        initial.u[grid.flat([2, 2])] = [0.03, -0.01];

        let dense_cfg = ForwardRunConfig { n_total: 9, history: HistoryMode::DenseF64 };
        let dense = run_forward(&problem, &objective, &dense_cfg, initial.clone()).unwrap();
        let adj_dense =
            run_adjoint(&problem, &objective, &dense.history, &gamma, &params, 9, None).unwrap();

        let ck_cfg =
            ForwardRunConfig { n_total: 9, history: HistoryMode::Checkpoint { stride: 4 } };
        let ck = run_forward(&problem, &objective, &ck_cfg, initial).unwrap();
        let adj_ck =
            run_adjoint(&problem, &objective, &ck.history, &gamma, &params, 9, None).unwrap();

        for (a, b) in adj_dense.sensitivity_projected.iter().zip(&adj_ck.sensitivity_projected) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1e-12), "{a} vs {b}");
        }
    }
}
