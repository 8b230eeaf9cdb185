//! Objective functionals, the volume constraint, and the source terms they
//! contribute to the backward sweep.
//!
//! Both objectives are space-time averages sampled with node sums over a
//! step window (endpoints included), so a value is just the mean of the
//! per-level region means. The minimization sign convention is kept
//! throughout: maximizing pressure or directed flow means minimizing `J`.

use crate::grid::{ScalarField, UniformGrid, VectorField};
use crate::lattice::{pressure, LatticeModel};

/// Node region for volume-type objectives.
#[derive(Clone, Debug, PartialEq)]
pub enum Region<const D: usize> {
    /// Inclusive index box.
    Boxed { min: [usize; D], max: [usize; D] },
    /// Axis-aligned cylinder rasterized to nodes whose centers fall inside.
    Cylinder { axis: usize, center: [f64; D], diameter: f64, height: f64 },
}

impl<const D: usize> Region<D> {
    pub fn nodes(&self, grid: &UniformGrid<D>) -> Vec<usize> {
        match self {
            Region::Boxed { min, max } => grid
                .nodes()
                .enumerate()
                .filter(|(_, idx)| (0..D).all(|a| idx[a] >= min[a] && idx[a] <= max[a]))
                .map(|(flat, _)| flat)
                .collect(),
            Region::Cylinder { axis, center, diameter, height } => grid
                .nodes()
                .enumerate()
                .filter(|(_, idx)| {
                    let x = grid.position(*idx);
                    let mut radial = 0.0;
                    for a in 0..D {
                        if a != *axis {
                            radial += (x[a] - center[a]).powi(2);
                        }
                    }
                    radial.sqrt() <= diameter / 2.0
                        && (x[*axis] - center[*axis]).abs() <= height / 2.0
                })
                .map(|(flat, _)| flat)
                .collect(),
        }
    }
}

/// What is being averaged and where.
#[derive(Clone, Debug, PartialEq)]
pub enum ObjectiveKind<const D: usize> {
    /// Average pressure over boundary faces, `(axis, side)` pairs.
    BoundaryPressure { faces: Vec<(usize, usize)> },
    /// Average velocity component along `direction` over an interior region.
    RegionVelocity { region: Region<D>, direction: [f64; D] },
}

/// Objective functional: kind plus the evaluation window in step indices
/// (inclusive on both ends).
#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveSpec<const D: usize> {
    pub kind: ObjectiveKind<D>,
    pub window: (usize, usize),
}

impl<const D: usize> ObjectiveSpec<D> {
    /// Sorted, deduplicated node set the objective samples.
    pub fn node_set(&self, grid: &UniformGrid<D>) -> Vec<usize> {
        let mut nodes = match &self.kind {
            ObjectiveKind::BoundaryPressure { faces } => {
                let n = grid.extents();
                let mut out = Vec::new();
                for idx in grid.nodes() {
                    if faces.iter().any(|&(axis, side)| {
                        idx[axis] == if side == 0 { 0 } else { n[axis] - 1 }
                    }) {
                        out.push(grid.flat(idx));
                    }
                }
                out
            }
            ObjectiveKind::RegionVelocity { region, .. } => region.nodes(grid),
        };
        nodes.sort_unstable();
        nodes.dedup();
        nodes
    }

    pub fn in_window(&self, level: usize) -> bool {
        level >= self.window.0 && level <= self.window.1
    }

    pub fn window_len(&self) -> usize {
        self.window.1 - self.window.0 + 1
    }

    /// Mean of the raw integrand over the region at one time level
    /// (pressure for the boundary objective, `n . u` for the flow one).
    pub fn instantaneous_mean(
        &self,
        nodes: &[usize],
        rho: &ScalarField<D>,
        u: &VectorField<D>,
    ) -> f64 {
        assert!(!nodes.is_empty(), "objective region is empty");
        let sum: f64 = match &self.kind {
            ObjectiveKind::BoundaryPressure { .. } => {
                nodes.iter().map(|&f| pressure(rho[f])).sum()
            }
            ObjectiveKind::RegionVelocity { direction, .. } => nodes
                .iter()
                .map(|&f| (0..D).map(|a| direction[a] * u[f][a]).sum::<f64>())
                .sum(),
        };
        sum / nodes.len() as f64
    }

    /// Windowed objective from the per-level series of region means.
    pub fn from_series(&self, series: &[f64]) -> f64 {
        let (a, b) = self.window;
        assert!(b < series.len(), "series shorter than objective window");
        let mean: f64 = series[a..=b].iter().sum::<f64>() / self.window_len() as f64;
        -mean
    }

    /// Per-level adjoint sources, the exact discrete derivative of the
    /// objective with respect to the sampled state.
    pub fn sources(&self, grid: &UniformGrid<D>) -> ObjectiveSources<D> {
        let nodes = self.node_set(grid);
        let weight = -1.0 / (nodes.len() as f64 * self.window_len() as f64);
        match &self.kind {
            ObjectiveKind::BoundaryPressure { .. } => ObjectiveSources {
                nodes,
                rho_source: weight / 3.0,
                u_source: [0.0; D],
                window: self.window,
            },
            ObjectiveKind::RegionVelocity { direction, .. } => {
                let mut u_source = [0.0; D];
                for a in 0..D {
                    u_source[a] = weight * direction[a];
                }
                ObjectiveSources { nodes, rho_source: 0.0, u_source, window: self.window }
            }
        }
    }
}

/// Discrete objective gradient with respect to the state at one level:
/// constant per node over the region, zero outside the window.
#[derive(Clone, Debug)]
pub struct ObjectiveSources<const D: usize> {
    pub nodes: Vec<usize>,
    pub rho_source: f64,
    pub u_source: [f64; D],
    window: (usize, usize),
}

impl<const D: usize> ObjectiveSources<D> {
    /// Adds the sources into the adjoint fields at `level`.
    pub fn accumulate(
        &self,
        level: usize,
        rho_adj: &mut ScalarField<D>,
        u_adj: &mut VectorField<D>,
    ) {
        if level < self.window.0 || level > self.window.1 {
            return;
        }
        for &flat in &self.nodes {
            rho_adj[flat] += self.rho_source;
            for a in 0..D {
                u_adj[flat][a] += self.u_source[a];
            }
        }
    }

    /// Per-population derivative `dJ/df_i` at a source node inside the
    /// window: populations enter the state only through their density and
    /// velocity moments.
    pub fn dj_df(&self, model: &LatticeModel<D>, i: usize) -> f64 {
        let c = model.velocity(i);
        let mut v = self.rho_source;
        for a in 0..D {
            v += c[a] as f64 * self.u_source[a];
        }
        v
    }
}

/// Volume constraint `G = mean(gamma) / v_max - 1`; feasible when `G <= 0`.
pub fn eval_g(projected: &[f64], v_max: f64) -> f64 {
    let mean = projected.iter().sum::<f64>() / projected.len() as f64;
    mean / v_max - 1.0
}

/// Uniform derivative of [`eval_g`] with respect to the projected density.
pub fn volume_sensitivity_projected(n_nodes: usize, v_max: f64) -> f64 {
    1.0 / (v_max * n_nodes as f64)
}

/// Volume bound with an optional continuation schedule of
/// `(from_step, v_max)` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct ConstraintSpec {
    pub v_max: f64,
    pub schedule: Vec<(usize, f64)>,
}

impl ConstraintSpec {
    pub fn fixed(v_max: f64) -> Self {
        Self { v_max, schedule: Vec::new() }
    }

    /// Active bound at an optimization step.
    pub fn v_max_at(&self, step: usize) -> f64 {
        let mut v = self.v_max;
        for &(from, value) in &self.schedule {
            if step >= from {
                v = value;
            }
        }
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> UniformGrid<2> {
        UniformGrid::new([6, 5], 1.0)
    }

    fn all_faces() -> Vec<(usize, usize)> {
        vec![(0, 0), (0, 1), (1, 0), (1, 1)]
    }

    #[test]
    fn boundary_node_set_dedups_corners() {
        let spec = ObjectiveSpec::<2> {
            kind: ObjectiveKind::BoundaryPressure { faces: all_faces() },
            window: (0, 3),
        };
        let nodes = spec.node_set(&grid());
        // 2 * 6 + 2 * 5 - 4 corners
        assert_eq!(nodes.len(), 18);
    }

    #[test]
    fn j1_of_uniform_density() {
        let g = grid();
        let spec = ObjectiveSpec::<2> {
            kind: ObjectiveKind::BoundaryPressure { faces: all_faces() },
            window: (0, 2),
        };
        let nodes = spec.node_set(&g);
        let rho = ScalarField::constant(&g, 1.0);
        let u = VectorField::zeros(&g);
        let inst = spec.instantaneous_mean(&nodes, &rho, &u);
        assert!((inst - 1.0 / 3.0).abs() < 1e-15);
        let series = vec![inst; 3];
        assert!((spec.from_series(&series) + 1.0 / 3.0).abs() < 1e-15);

        let zero = ScalarField::zeros(&g);
        assert_eq!(spec.instantaneous_mean(&nodes, &zero, &u), 0.0);
    }

    #[test]
    fn j1_two_step_window() {
        // rho = 0.9 then 1.2: J1 = -(0.3 + 0.4)/2 = -0.35.
        let spec = ObjectiveSpec::<2> {
            kind: ObjectiveKind::BoundaryPressure { faces: all_faces() },
            window: (0, 1),
        };
        let series = vec![0.3, 0.4];
        assert!((spec.from_series(&series) + 0.35).abs() < 1e-15);
    }

    #[test]
    fn j2_directed_flow() {
        let g = grid();
        let region = Region::Boxed { min: [1, 1], max: [4, 3] };
        let spec = ObjectiveSpec {
            kind: ObjectiveKind::RegionVelocity { region, direction: [0.0, 1.0] },
            window: (0, 0),
        };
        let nodes = spec.node_set(&g);
        let rho = ScalarField::constant(&g, 1.0);
        let up = VectorField::from_fn(&g, |_| [0.0, 0.1]);
        assert!((spec.instantaneous_mean(&nodes, &rho, &up) - 0.1).abs() < 1e-15);
        // Orthogonal flow scores zero.
        let across = VectorField::from_fn(&g, |_| [0.2, 0.0]);
        assert_eq!(spec.instantaneous_mean(&nodes, &rho, &across), 0.0);
    }

    #[test]
    fn objective_is_linear_in_state() {
        let g = grid();
        let spec = ObjectiveSpec::<2> {
            kind: ObjectiveKind::BoundaryPressure { faces: all_faces() },
            window: (0, 1),
        };
        let nodes = spec.node_set(&g);
        let rho = ScalarField::from_fn(&g, |idx| 1.0 + 0.01 * idx[0] as f64);
        let u = VectorField::zeros(&g);
        let one = spec.instantaneous_mean(&nodes, &rho, &u);
        let mut rho2 = rho.clone();
        for v in rho2.as_mut_slice() {
            *v *= 2.0;
        }
        let two = spec.instantaneous_mean(&nodes, &rho2, &u);
        assert!((two - 2.0 * one).abs() < 1e-14);
    }

    #[test]
    fn sources_gate_on_window() {
        let g = grid();
        let spec = ObjectiveSpec::<2> {
            kind: ObjectiveKind::BoundaryPressure { faces: all_faces() },
            window: (2, 5),
        };
        let src = spec.sources(&g);
        let mut rho_adj = ScalarField::zeros(&g);
        let mut u_adj = VectorField::zeros(&g);
        src.accumulate(1, &mut rho_adj, &mut u_adj);
        assert!(rho_adj.as_slice().iter().all(|&v| v == 0.0));
        src.accumulate(2, &mut rho_adj, &mut u_adj);
        let expect = -(1.0 / 3.0) / (18.0 * 4.0);
        assert!((rho_adj[src.nodes[0]] - expect).abs() < 1e-15);
    }

    #[test]
    fn rest_population_feels_no_directed_source() {
        let g = UniformGrid::new([4, 4, 4], 1.0);
        let spec = ObjectiveSpec::<3> {
            kind: ObjectiveKind::RegionVelocity {
                region: Region::Boxed { min: [1, 1, 1], max: [2, 2, 2] },
                direction: [0.0, 1.0, 0.0],
            },
            window: (0, 0),
        };
        let src = spec.sources(&g);
        let model = LatticeModel::d3q15();
        assert_eq!(src.dj_df(&model, 0), 0.0);
        // A population moving along +y feels the full weight.
        let iy = (0..model.q()).find(|&i| model.velocity(i) == [0, 1, 0]).unwrap();
        assert!(src.dj_df(&model, iy) < 0.0);
    }

    /// The sources are the exact gradient of the evaluated objective: pairing
    /// them with a state perturbation reproduces the finite difference of the
    /// objective on random histories.
    #[test]
    fn sources_match_objective_finite_difference() {
        let g = UniformGrid::new([10, 10], 1.0);
        let spec = ObjectiveSpec::<2> {
            kind: ObjectiveKind::BoundaryPressure { faces: all_faces() },
            window: (0, 4),
        };
        let nodes = spec.node_set(&g);
        let src = spec.sources(&g);
        let levels = 5;
        let mut seed = 7u64;
        let mut next = move || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        let history: Vec<ScalarField<2>> = (0..levels)
            .map(|_| ScalarField::from_fn(&g, |_| 0.9 + 0.2 * next()))
            .collect();
        let delta: Vec<ScalarField<2>> =
            (0..levels).map(|_| ScalarField::from_fn(&g, |_| next() - 0.5)).collect();
        let u = VectorField::zeros(&g);

        let eval = |fields: &[ScalarField<2>]| {
            let series: Vec<f64> =
                fields.iter().map(|rho| spec.instantaneous_mean(&nodes, rho, &u)).collect();
            spec.from_series(&series)
        };
        let h = 1e-6;
        let mut plus = history.clone();
        let mut minus = history.clone();
        for t in 0..levels {
            for k in 0..g.len() {
                plus[t][k] += h * delta[t][k];
                minus[t][k] -= h * delta[t][k];
            }
        }
        let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
        let mut paired = 0.0;
        for t in 0..levels {
            for &flat in &src.nodes {
                paired += src.rho_source * delta[t][flat];
            }
        }
        assert!((fd - paired).abs() <= 1e-6 * paired.abs().max(1e-12), "{fd} vs {paired}");
    }

    #[test]
    fn volume_constraint_values() {
        assert!((eval_g(&vec![0.25; 40], 0.25)).abs() < 1e-14);
        assert!((eval_g(&vec![0.0; 40], 0.25) + 1.0).abs() < 1e-14);
        assert!((eval_g(&vec![1.0; 40], 0.25) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn volume_sensitivity_is_uniform_gradient() {
        let n = 100 * 100;
        let v = volume_sensitivity_projected(n, 0.25);
        assert!((v - 1.0 / (0.25 * 1e4)).abs() < 1e-15);
        assert!((volume_sensitivity_projected(n, 0.5) - v / 2.0).abs() < 1e-15);
        // Finite difference of eval_g.
        let mut gamma = vec![0.3; 50];
        let h = 1e-7;
        let g0 = eval_g(&gamma, 0.25);
        gamma[17] += h;
        let g1 = eval_g(&gamma, 0.25);
        assert!(((g1 - g0) / h - volume_sensitivity_projected(50, 0.25)).abs() < 1e-6);
    }

    #[test]
    fn constraint_schedule_is_step_monotone() {
        let spec =
            ConstraintSpec { v_max: 0.4, schedule: vec![(0, 1.0), (40, 0.4)] };
        assert_eq!(spec.v_max_at(0), 1.0);
        assert_eq!(spec.v_max_at(39), 1.0);
        assert_eq!(spec.v_max_at(40), 0.4);
        assert_eq!(spec.v_max_at(400), 0.4);
        assert_eq!(ConstraintSpec::fixed(0.25).v_max_at(10), 0.25);
    }

    #[test]
    fn cylinder_region_rasterizes_by_node_centers() {
        let g = UniformGrid::new([11, 11, 11], 1.0);
        let region = Region::Cylinder {
            axis: 2,
            center: [5.0, 5.0, 5.0],
            diameter: 4.0,
            height: 2.0,
        };
        let nodes = region.nodes(&g);
        // Disk of radius 2 has 13 nodes; 3 levels of them.
        assert_eq!(nodes.len(), 13 * 3);
    }
}
