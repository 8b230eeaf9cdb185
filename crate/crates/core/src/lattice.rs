//! Discrete velocity models and the macroscopic-variable lattice scheme
//! primitives: moments, the equilibrium distribution and its gradient term,
//! and the viscosity relation.
//!
//! The relaxation time is fixed to 1, so the scheme never stores populations:
//! each step streams equilibrium values reconstructed from the macroscopic
//! fields of the previous step. Everything here works in lattice units with
//! `dt = dx` and unit particle speed.

use crate::grid::{TensorField, UniformGrid, VectorField};
use thiserror::Error;

/// A discrete velocity set with its weights.
#[derive(Clone, Debug)]
pub struct LatticeModel<const D: usize> {
    velocities: Vec<[i32; D]>,
    weights: Vec<f64>,
}

impl LatticeModel<2> {
    /// Nine-velocity model on the 2D square lattice.
    pub fn d2q9() -> Self {
        let velocities = vec![
            [0, 0],
            [1, 0],
            [0, 1],
            [-1, 0],
            [0, -1],
            [1, 1],
            [-1, 1],
            [-1, -1],
            [1, -1],
        ];
        let weights = vec![
            4.0 / 9.0,
            1.0 / 9.0,
            1.0 / 9.0,
            1.0 / 9.0,
            1.0 / 9.0,
            1.0 / 36.0,
            1.0 / 36.0,
            1.0 / 36.0,
            1.0 / 36.0,
        ];
        Self { velocities, weights }
    }
}

impl LatticeModel<3> {
    /// Fifteen-velocity model: rest, six axis neighbors, eight cube corners.
    pub fn d3q15() -> Self {
        let mut velocities = vec![[0, 0, 0]];
        for a in 0..3 {
            for s in [1i32, -1] {
                let mut c = [0i32; 3];
                c[a] = s;
                velocities.push(c);
            }
        }
        for sx in [1i32, -1] {
            for sy in [1i32, -1] {
                for sz in [1i32, -1] {
                    velocities.push([sx, sy, sz]);
                }
            }
        }
        let mut weights = vec![2.0 / 9.0];
        weights.extend(std::iter::repeat(1.0 / 9.0).take(6));
        weights.extend(std::iter::repeat(1.0 / 72.0).take(8));
        Self { velocities, weights }
    }
}

impl<const D: usize> LatticeModel<D> {
    /// Population count.
    pub fn q(&self) -> usize {
        self.velocities.len()
    }

    pub fn velocity(&self, i: usize) -> [i32; D] {
        self.velocities[i]
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn velocities(&self) -> &[[i32; D]] {
        &self.velocities
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// Density and velocity moments of a full set of populations.
pub fn moments<const D: usize>(populations: &[f64], model: &LatticeModel<D>) -> (f64, [f64; D]) {
    assert_eq!(populations.len(), model.q());
    let mut rho = 0.0;
    let mut u = [0.0; D];
    for (i, &f) in populations.iter().enumerate() {
        rho += f;
        let c = model.velocity(i);
        for a in 0..D {
            u[a] += c[a] as f64 * f;
        }
    }
    (rho, u)
}

/// Pressure from density, `p = rho / 3`.
pub fn pressure(rho: f64) -> f64 {
    rho / 3.0
}

/// Equilibrium distribution for population `i`, including the velocity
/// gradient correction that sets the viscosity.
///
/// Valid in the low-Mach regime; callers should keep `|u|` well below 0.3.
pub fn equilibrium<const D: usize>(
    model: &LatticeModel<D>,
    i: usize,
    rho: f64,
    u: &[f64; D],
    grad_u: &[[f64; D]; D],
    a_param: f64,
    dx: f64,
) -> f64 {
    let c = model.velocity(i);
    let mut cu = 0.0;
    let mut uu = 0.0;
    for a in 0..D {
        cu += c[a] as f64 * u[a];
        uu += u[a] * u[a];
    }
    let mut strain = 0.0;
    for a in 0..D {
        for b in 0..D {
            strain += (grad_u[a][b] + grad_u[b][a]) * (c[a] * c[b]) as f64;
        }
    }
    model.weight(i) * (rho + 3.0 * cu + 4.5 * cu * cu - 1.5 * uu + dx * a_param * strain)
}

#[derive(Debug, Error)]
#[error("equilibrium parameter A = {0} gives a non-positive viscosity (requires A < 3/4)")]
pub struct ViscosityError(pub f64);

/// Kinematic viscosity of the scheme, `nu = (1/6 - 2A/9) dx`.
pub fn viscosity_of_a(a_param: f64, dx: f64) -> Result<f64, ViscosityError> {
    let nu = (1.0 / 6.0 - 2.0 / 9.0 * a_param) * dx;
    if nu <= 0.0 {
        return Err(ViscosityError(a_param));
    }
    Ok(nu)
}

/// Velocity gradient `grad[a][b] = du_a / dx_b` at one node.
///
/// Second-order central differences in the interior; first-order one-sided at
/// non-periodic faces; wrap-around central on periodic axes.
pub fn velocity_gradient<const D: usize>(
    u: &VectorField<D>,
    grid: &UniformGrid<D>,
    node: [usize; D],
    periodic: [bool; D],
) -> [[f64; D]; D] {
    let dx = grid.dx();
    let n = grid.extents();
    let mut grad = [[0.0; D]; D];
    for b in 0..D {
        if n[b] < 2 {
            continue;
        }
        let (plus, minus, scale) = if periodic[b] {
            let mut p = node;
            let mut m = node;
            p[b] = (node[b] + 1) % n[b];
            m[b] = (node[b] + n[b] - 1) % n[b];
            (p, m, 0.5 / dx)
        } else if node[b] == 0 {
            let mut p = node;
            p[b] = 1;
            (p, node, 1.0 / dx)
        } else if node[b] == n[b] - 1 {
            let mut m = node;
            m[b] = n[b] - 2;
            (node, m, 1.0 / dx)
        } else {
            let mut p = node;
            let mut m = node;
            p[b] = node[b] + 1;
            m[b] = node[b] - 1;
            (p, m, 0.5 / dx)
        };
        let up = u[grid.flat(plus)];
        let um = u[grid.flat(minus)];
        for a in 0..D {
            grad[a][b] = (up[a] - um[a]) * scale;
        }
    }
    grad
}

/// Fills `out` with the velocity gradient at every node.
pub fn velocity_gradient_field<const D: usize>(
    u: &VectorField<D>,
    grid: &UniformGrid<D>,
    periodic: [bool; D],
    out: &mut TensorField<D>,
) {
    use rayon::prelude::*;
    let tensors = out.as_mut_slice();
    tensors
        .par_iter_mut()
        .enumerate()
        .for_each(|(flat, t)| *t = velocity_gradient(u, grid, grid.node(flat), periodic));
}

/// Accumulates `out_a += factor * sum_b D_b^T s_ab`, the exact transpose of
/// the stencil applied by [`velocity_gradient`]. Needed so the backward sweep
/// transposes the forward step bit-for-bit, one-sided boundary rows included.
pub fn gradient_transpose_accumulate<const D: usize>(
    s: &TensorField<D>,
    grid: &UniformGrid<D>,
    periodic: [bool; D],
    factor: f64,
    out: &mut VectorField<D>,
) {
    let dx = grid.dx();
    let n = grid.extents();
    for (flat, node) in grid.nodes().enumerate() {
        let mut acc = [0.0; D];
        for b in 0..D {
            if n[b] < 2 {
                continue;
            }
            if periodic[b] {
                let mut m = node;
                let mut p = node;
                m[b] = (node[b] + n[b] - 1) % n[b];
                p[b] = (node[b] + 1) % n[b];
                let sm = s[grid.flat(m)];
                let sp = s[grid.flat(p)];
                for a in 0..D {
                    acc[a] += (sm[a][b] - sp[a][b]) * 0.5 / dx;
                }
                continue;
            }
            // Rows of the forward stencil that reference u at `node` along b:
            // central rows at node[b] -/+ 1 and the one-sided face rows.
            let xb = node[b];
            if xb >= 1 && xb - 1 >= 1 && xb - 1 <= n[b] - 2 {
                let mut m = node;
                m[b] = xb - 1;
                let sm = s[grid.flat(m)];
                for a in 0..D {
                    acc[a] += sm[a][b] * 0.5 / dx;
                }
            }
            if xb + 1 <= n[b] - 2 {
                let mut p = node;
                p[b] = xb + 1;
                let sp = s[grid.flat(p)];
                for a in 0..D {
                    acc[a] -= sp[a][b] * 0.5 / dx;
                }
            }
            if xb == 0 {
                let s0 = s[flat];
                for a in 0..D {
                    acc[a] -= s0[a][b] / dx;
                }
            }
            if xb == 1 {
                let mut m = node;
                m[b] = 0;
                let sm = s[grid.flat(m)];
                for a in 0..D {
                    acc[a] += sm[a][b] / dx;
                }
            }
            if xb == n[b] - 1 {
                let s1 = s[flat];
                for a in 0..D {
                    acc[a] += s1[a][b] / dx;
                }
            }
            if xb + 2 == n[b] {
                let mut p = node;
                p[b] = n[b] - 1;
                let sp = s[grid.flat(p)];
                for a in 0..D {
                    acc[a] -= sp[a][b] / dx;
                }
            }
        }
        let o = &mut out[flat];
        for a in 0..D {
            o[a] += factor * acc[a];
        }
    }
}
