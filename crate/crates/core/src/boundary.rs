//! Macroscopic boundary conditions.
//!
//! The scheme works on macroscopic fields only, so boundary conditions
//! overwrite density / velocity values directly after the penalization
//! update. Periodic faces are realized by index wrap-around inside the
//! streaming and gradient stencils and never touch field values here.

use crate::grid::{ScalarField, UniformGrid, VectorField};
use thiserror::Error;

/// Condition on one grid face.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum FaceCondition<const D: usize> {
    /// No-slip wall: `u = 0`, density free.
    Wall,
    /// Prescribed velocity, density free.
    VelocityInlet { u: [f64; D] },
    /// Prescribed density and tangential velocity; the normal component
    /// evolves freely.
    PressureOutlet { rho: f64, tangential: [f64; D] },
    /// Paired with the opposing face; handled by wrap-around streaming.
    Periodic,
}

/// Conditions for all `2 D` faces, indexed `[axis][side]` with side 0 the
/// low face.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundarySet<const D: usize> {
    pub faces: [[FaceCondition<D>; 2]; D],
}

#[derive(Debug, Error)]
pub enum BoundaryError {
    #[error("periodic condition on axis {axis} must be set on both faces")]
    UnpairedPeriodic { axis: usize },
}

impl<const D: usize> BoundarySet<D> {
    pub fn all_walls() -> Self {
        Self { faces: [[FaceCondition::Wall; 2]; D] }
    }

    pub fn all_periodic() -> Self {
        Self { faces: [[FaceCondition::Periodic; 2]; D] }
    }

    pub fn validate(&self) -> Result<(), BoundaryError> {
        for axis in 0..D {
            let lo = matches!(self.faces[axis][0], FaceCondition::Periodic);
            let hi = matches!(self.faces[axis][1], FaceCondition::Periodic);
            if lo != hi {
                return Err(BoundaryError::UnpairedPeriodic { axis });
            }
        }
        Ok(())
    }

    /// Axes with wrap-around streaming.
    pub fn periodic_axes(&self) -> [bool; D] {
        std::array::from_fn(|axis| matches!(self.faces[axis][0], FaceCondition::Periodic))
    }

    fn for_each_face_node(
        &self,
        grid: &UniformGrid<D>,
        axis: usize,
        side: usize,
        mut f: impl FnMut(usize),
    ) {
        let n = grid.extents();
        let fixed = if side == 0 { 0 } else { n[axis] - 1 };
        for idx in grid.nodes() {
            if idx[axis] == fixed {
                f(grid.flat(idx));
            }
        }
    }

    /// Overwrites boundary values. Pressure faces are applied before
    /// velocity faces so that a velocity condition wins at shared corners.
    pub fn apply(&self, grid: &UniformGrid<D>, rho: &mut ScalarField<D>, u: &mut VectorField<D>) {
        for axis in 0..D {
            for side in 0..2 {
                if let FaceCondition::PressureOutlet { rho: rho_bar, tangential } =
                    self.faces[axis][side]
                {
                    self.for_each_face_node(grid, axis, side, |flat| {
                        rho[flat] = rho_bar;
                        for a in 0..D {
                            if a != axis {
                                u[flat][a] = tangential[a];
                            }
                        }
                    });
                }
            }
        }
        for axis in 0..D {
            for side in 0..2 {
                match self.faces[axis][side] {
                    FaceCondition::Wall => {
                        self.for_each_face_node(grid, axis, side, |flat| {
                            u[flat] = [0.0; D];
                        });
                    }
                    FaceCondition::VelocityInlet { u: u_bar } => {
                        self.for_each_face_node(grid, axis, side, |flat| {
                            u[flat] = u_bar;
                        });
                    }
                    _ => {}
                }
            }
        }
    }

    /// Transpose of [`apply`] for the backward sweep: adjoint components of
    /// overwritten values are zeroed, since prescribed values carry no
    /// dependence on the previous state.
    pub fn zero_adjoint(
        &self,
        grid: &UniformGrid<D>,
        rho_adj: &mut ScalarField<D>,
        u_adj: &mut VectorField<D>,
    ) {
        for axis in 0..D {
            for side in 0..2 {
                match self.faces[axis][side] {
                    FaceCondition::Wall | FaceCondition::VelocityInlet { .. } => {
                        self.for_each_face_node(grid, axis, side, |flat| {
                            u_adj[flat] = [0.0; D];
                        });
                    }
                    FaceCondition::PressureOutlet { .. } => {
                        self.for_each_face_node(grid, axis, side, |flat| {
                            rho_adj[flat] = 0.0;
                            for a in 0..D {
                                if a != axis {
                                    u_adj[flat][a] = 0.0;
                                }
                            }
                        });
                    }
                    FaceCondition::Periodic => {}
                }
            }
        }
    }
}
