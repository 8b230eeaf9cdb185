//! Pseudo-density field on the design grid: conic density filter, smoothed
//! Heaviside projection with steepness continuation, the chain rule back to
//! the raw variables, and the Brinkman interpolation of the inverse
//! permeability.

use crate::grid::UniformGrid;
use thiserror::Error;

/// Brinkman interpolation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BrinkmanParams {
    /// Inverse permeability of full solid (lattice units).
    pub kappa_max: f64,
    /// Convexity parameter; small values sharpen the interpolation.
    pub q: f64,
}

impl Default for BrinkmanParams {
    fn default() -> Self {
        Self { kappa_max: 1000.0, q: 0.1 }
    }
}

#[derive(Debug, Error)]
#[error("design density {0} outside [0, 1]")]
pub struct DensityRangeError(pub f64);

/// `kappa_ref(gamma) = kappa_max q gamma / ((1 - gamma) + q)`.
pub fn brinkman(gamma: f64, params: &BrinkmanParams) -> Result<f64, DensityRangeError> {
    if !(-1e-12..=1.0 + 1e-12).contains(&gamma) {
        return Err(DensityRangeError(gamma));
    }
    let g = gamma.clamp(0.0, 1.0);
    Ok(params.kappa_max * params.q * g / ((1.0 - g) + params.q))
}

/// `d kappa_ref / d gamma = kappa_max q (1 + q) / ((1 - gamma) + q)^2`.
pub fn brinkman_derivative(gamma: f64, params: &BrinkmanParams) -> Result<f64, DensityRangeError> {
    if !(-1e-12..=1.0 + 1e-12).contains(&gamma) {
        return Err(DensityRangeError(gamma));
    }
    let g = gamma.clamp(0.0, 1.0);
    let denom = (1.0 - g) + params.q;
    Ok(params.kappa_max * params.q * (1.0 + params.q) / (denom * denom))
}

/// Smoothed Heaviside projection of a filtered density.
pub fn heaviside_project(gbar: f64, beta: f64, eta: f64) -> f64 {
    let denom = (beta * eta).tanh() + (beta * (1.0 - eta)).tanh();
    ((beta * eta).tanh() + (beta * (gbar - eta)).tanh()) / denom
}

/// Derivative of [`heaviside_project`] with respect to the filtered density.
pub fn heaviside_project_derivative(gbar: f64, beta: f64, eta: f64) -> f64 {
    let denom = (beta * eta).tanh() + (beta * (1.0 - eta)).tanh();
    let t = (beta * (gbar - eta)).tanh();
    beta * (1.0 - t * t) / denom
}

/// Filter configuration. With `radius < dx` (or `enabled = false`) both the
/// filter and the projection are bypassed and the raw field is used directly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FilterSettings {
    pub enabled: bool,
    pub radius: f64,
    pub beta: f64,
    pub eta: f64,
}

impl FilterSettings {
    pub fn disabled() -> Self {
        Self { enabled: false, radius: 0.0, beta: 1.0, eta: 0.5 }
    }
}

/// Design variables plus their filtered and projected companions.
///
/// The projected field is the physical density used by the solver and the
/// volume constraint; it is refreshed on every update so the three fields can
/// never go stale relative to each other.
#[derive(Clone, Debug)]
pub struct DesignField<const D: usize> {
    grid: UniformGrid<D>,
    raw: Vec<f64>,
    filtered: Vec<f64>,
    projected: Vec<f64>,
    settings: FilterSettings,
    /// Conic filter stencil: relative offsets and their weights.
    stencil: Vec<([isize; D], f64)>,
    /// Per-node weight normalizer (boundary-truncated).
    norm: Vec<f64>,
}

impl<const D: usize> DesignField<D> {
    pub fn new(grid: UniformGrid<D>, initial: Vec<f64>, settings: FilterSettings) -> Self {
        assert_eq!(initial.len(), grid.len());
        let stencil = if settings.enabled { conic_stencil(&grid, settings.radius) } else { Vec::new() };
        let norm = if settings.enabled { stencil_norms(&grid, &stencil) } else { Vec::new() };
        let mut field = Self {
            grid,
            raw: initial,
            filtered: Vec::new(),
            projected: Vec::new(),
            settings,
            stencil,
            norm,
        };
        field.refresh();
        field
    }

    pub fn uniform(grid: UniformGrid<D>, value: f64, settings: FilterSettings) -> Self {
        let n = grid.len();
        Self::new(grid, vec![value; n], settings)
    }

    pub fn grid(&self) -> &UniformGrid<D> {
        &self.grid
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn filtered(&self) -> &[f64] {
        &self.filtered
    }

    /// Physical density.
    pub fn projected(&self) -> &[f64] {
        &self.projected
    }

    pub fn beta(&self) -> f64 {
        self.settings.beta
    }

    pub fn settings(&self) -> FilterSettings {
        self.settings
    }

    /// Replaces the raw variables and re-derives the filtered/projected fields.
    pub fn set_raw(&mut self, raw: &[f64]) {
        assert_eq!(raw.len(), self.raw.len());
        self.raw.copy_from_slice(raw);
        self.refresh();
    }

    /// Updates the projection steepness (continuation) and re-projects.
    pub fn set_beta(&mut self, beta: f64) {
        self.settings.beta = beta;
        self.refresh();
    }

    fn refresh(&mut self) {
        if !self.settings.enabled {
            self.filtered = self.raw.clone();
            self.projected = self.raw.clone();
            return;
        }
        self.filtered = apply_filter(&self.grid, &self.stencil, &self.norm, &self.raw);
        self.projected = self
            .filtered
            .iter()
            .map(|&g| heaviside_project(g, self.settings.beta, self.settings.eta))
            .collect();
    }

    /// Pulls a sensitivity with respect to the projected field back to the raw
    /// variables: projection derivative followed by the filter transpose.
    pub fn chain_rule(&self, d_projected: &[f64]) -> Vec<f64> {
        assert_eq!(d_projected.len(), self.raw.len());
        if !self.settings.enabled {
            return d_projected.to_vec();
        }
        let scaled: Vec<f64> = d_projected
            .iter()
            .zip(&self.filtered)
            .map(|(&d, &g)| {
                d * heaviside_project_derivative(g, self.settings.beta, self.settings.eta)
            })
            .collect();
        apply_filter_transpose(&self.grid, &self.stencil, &self.norm, &scaled)
    }
}

fn conic_stencil<const D: usize>(grid: &UniformGrid<D>, radius: f64) -> Vec<([isize; D], f64)> {
    let dx = grid.dx();
    let reach = (radius / dx).floor() as isize;
    let mut offsets = Vec::new();
    let mut cursor = [-reach; D];
    loop {
        let dist = cursor.iter().map(|&o| (o * o) as f64).sum::<f64>().sqrt() * dx;
        let w = radius - dist;
        if w > 0.0 {
            offsets.push((cursor, w));
        }
        let mut a = 0;
        loop {
            cursor[a] += 1;
            if cursor[a] <= reach {
                break;
            }
            cursor[a] = -reach;
            a += 1;
            if a == D {
                return offsets;
            }
        }
    }
}

fn stencil_norms<const D: usize>(
    grid: &UniformGrid<D>,
    stencil: &[([isize; D], f64)],
) -> Vec<f64> {
    let n = grid.extents();
    grid.nodes()
        .map(|idx| {
            stencil
                .iter()
                .filter(|(off, _)| in_bounds(idx, off, n))
                .map(|&(_, w)| w)
                .sum()
        })
        .collect()
}

fn in_bounds<const D: usize>(idx: [usize; D], off: &[isize; D], n: [usize; D]) -> bool {
    for a in 0..D {
        let j = idx[a] as isize + off[a];
        if j < 0 || j >= n[a] as isize {
            return false;
        }
    }
    true
}

fn shifted<const D: usize>(grid: &UniformGrid<D>, idx: [usize; D], off: &[isize; D]) -> usize {
    let mut j = [0usize; D];
    for a in 0..D {
        j[a] = (idx[a] as isize + off[a]) as usize;
    }
    grid.flat(j)
}

fn apply_filter<const D: usize>(
    grid: &UniformGrid<D>,
    stencil: &[([isize; D], f64)],
    norm: &[f64],
    input: &[f64],
) -> Vec<f64> {
    let n = grid.extents();
    grid.nodes()
        .enumerate()
        .map(|(flat, idx)| {
            let sum: f64 = stencil
                .iter()
                .filter(|(off, _)| in_bounds(idx, off, n))
                .map(|(off, w)| w * input[shifted(grid, idx, off)])
                .sum();
            sum / norm[flat]
        })
        .collect()
}

/// Transpose of [`apply_filter`]: `out_j = sum_i w(i - j) s_i / norm_i`.
fn apply_filter_transpose<const D: usize>(
    grid: &UniformGrid<D>,
    stencil: &[([isize; D], f64)],
    norm: &[f64],
    input: &[f64],
) -> Vec<f64> {
    let n = grid.extents();
    grid.nodes()
        .map(|idx| {
            stencil
                .iter()
                .filter(|(off, _)| in_bounds(idx, off, n))
                .map(|(off, w)| {
                    let i = shifted(grid, idx, off);
                    w * input[i] / norm[i]
                })
                .sum()
        })
        .collect()
}
