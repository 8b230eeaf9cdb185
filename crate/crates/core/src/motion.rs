//! Prescribed rigid-body motion of the design grid.
//!
//! A motion is a rotation law about a pivot in design coordinates composed
//! with a translation law of the pivot image in analysis coordinates. The
//! angular velocity and translational velocity are the analytic derivatives
//! of the corresponding position laws.

use std::f64::consts::TAU;

/// Rotation angle law.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum RotationLaw {
    None,
    /// `theta(t) = 2 pi t / period` (one full turn per period).
    ConstantRate { period: f64 },
}

impl RotationLaw {
    pub fn angle(&self, t: f64) -> f64 {
        match self {
            RotationLaw::None => 0.0,
            RotationLaw::ConstantRate { period } => TAU * t / period,
        }
    }

    /// `omega(t) = d theta / dt`.
    pub fn angular_velocity(&self, t: f64) -> f64 {
        match self {
            RotationLaw::None => 0.0,
            RotationLaw::ConstantRate { period } => {
                let _ = t;
                TAU / period
            }
        }
    }
}

/// Translation law for the pivot image `x_G(t)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TranslationLaw<const D: usize> {
    Fixed { base: [f64; D] },
    ConstantVelocity { base: [f64; D], velocity: [f64; D] },
    /// `x_G(t) = base + amplitude * sin(2 pi t / period)`.
    Sinusoidal { base: [f64; D], amplitude: [f64; D], period: f64 },
}

impl<const D: usize> TranslationLaw<D> {
    pub fn position(&self, t: f64) -> [f64; D] {
        match self {
            TranslationLaw::Fixed { base } => *base,
            TranslationLaw::ConstantVelocity { base, velocity } => {
                let mut x = *base;
                for a in 0..D {
                    x[a] += velocity[a] * t;
                }
                x
            }
            TranslationLaw::Sinusoidal { base, amplitude, period } => {
                let s = (TAU * t / period).sin();
                let mut x = *base;
                for a in 0..D {
                    x[a] += amplitude[a] * s;
                }
                x
            }
        }
    }

    pub fn velocity(&self, t: f64) -> [f64; D] {
        match self {
            TranslationLaw::Fixed { .. } => [0.0; D],
            TranslationLaw::ConstantVelocity { velocity, .. } => *velocity,
            TranslationLaw::Sinusoidal { amplitude, period, .. } => {
                let c = (TAU * t / period).cos() * TAU / period;
                let mut v = [0.0; D];
                for a in 0..D {
                    v[a] = amplitude[a] * c;
                }
                v
            }
        }
    }
}

/// Full rigid motion of the design grid.
///
/// In 3D the rotation acts about one coordinate axis, which is all the shipped
/// cases need; `rotation_axis` picks it (2 = z).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MotionSpec<const D: usize> {
    /// Pivot in design coordinates (`xi_G`).
    pub pivot: [f64; D],
    pub rotation: RotationLaw,
    pub translation: TranslationLaw<D>,
    /// Index of the rotation axis; ignored in 2D.
    pub rotation_axis: usize,
}

impl<const D: usize> MotionSpec<D> {
    pub fn stationary(pivot: [f64; D]) -> Self {
        Self {
            pivot,
            rotation: RotationLaw::None,
            translation: TranslationLaw::Fixed { base: pivot },
            rotation_axis: 2.min(D - 1),
        }
    }

    /// In-plane axes the rotation acts on.
    fn plane(&self) -> (usize, usize) {
        if D == 2 {
            (0, 1)
        } else {
            match self.rotation_axis {
                0 => (1, 2),
                1 => (2, 0),
                _ => (0, 1),
            }
        }
    }

    /// Snapshot of the transform at time `t`, hoisting the trigonometry out
    /// of per-node loops.
    pub fn frame(&self, t: f64) -> MotionFrame<D> {
        let theta = self.rotation.angle(t);
        MotionFrame {
            cos: theta.cos(),
            sin: theta.sin(),
            omega: self.rotation.angular_velocity(t),
            pivot: self.pivot,
            xg: self.translation.position(t),
            ug: self.translation.velocity(t),
            plane: self.plane(),
        }
    }

    /// Position in analysis coordinates of the design point `xi` at time `t`:
    /// `x_ref = R(theta(t)) (xi - xi_G) + x_G(t)`.
    pub fn body_position(&self, xi: [f64; D], t: f64) -> [f64; D] {
        self.frame(t).position(xi)
    }

    /// Velocity of the design point `xi` at time `t`:
    /// `u_ref = R'(theta(t)) (xi - xi_G) omega(t) + u_G(t)`.
    pub fn body_velocity(&self, xi: [f64; D], t: f64) -> [f64; D] {
        self.frame(t).velocity(xi)
    }
}

/// Evaluated rigid transform at a fixed time.
#[derive(Clone, Copy, Debug)]
pub struct MotionFrame<const D: usize> {
    cos: f64,
    sin: f64,
    omega: f64,
    pivot: [f64; D],
    xg: [f64; D],
    ug: [f64; D],
    plane: (usize, usize),
}

impl<const D: usize> MotionFrame<D> {
    pub fn position(&self, xi: [f64; D]) -> [f64; D] {
        let (p, q) = self.plane;
        let mut r = [0.0; D];
        for a in 0..D {
            r[a] = xi[a] - self.pivot[a];
        }
        let mut x = r;
        x[p] = self.cos * r[p] - self.sin * r[q];
        x[q] = self.sin * r[p] + self.cos * r[q];
        for a in 0..D {
            x[a] += self.xg[a];
        }
        x
    }

    pub fn velocity(&self, xi: [f64; D]) -> [f64; D] {
        let (p, q) = self.plane;
        let mut r = [0.0; D];
        for a in 0..D {
            r[a] = xi[a] - self.pivot[a];
        }
        let mut v = self.ug;
        v[p] += (-self.sin * r[p] - self.cos * r[q]) * self.omega;
        v[q] += (self.cos * r[p] - self.sin * r[q]) * self.omega;
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn identity_transform() {
        let spec = MotionSpec::<2> {
            pivot: [3.0, 4.0],
            rotation: RotationLaw::None,
            translation: TranslationLaw::Fixed { base: [3.0, 4.0] },
            rotation_axis: 2,
        };
        let x = spec.body_position([1.0, 2.0], 17.0);
        assert!((x[0] - 1.0).abs() < 1e-14 && (x[1] - 2.0).abs() < 1e-14);
        assert_eq!(spec.body_velocity([1.0, 2.0], 17.0), [0.0, 0.0]);
    }

    #[test]
    fn quarter_turn() {
        // theta = pi/2 sends (1, 0) to (0, 1) about the origin.
        let spec = MotionSpec::<2> {
            pivot: [0.0, 0.0],
            rotation: RotationLaw::ConstantRate { period: 4.0 },
            translation: TranslationLaw::Fixed { base: [0.0, 0.0] },
            rotation_axis: 2,
        };
        let x = spec.body_position([1.0, 0.0], 1.0);
        assert!(x[0].abs() < 1e-14 && (x[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn tangential_velocity_of_circular_motion() {
        // At theta = 0 a point at radius r moves with (0, omega r).
        let spec = MotionSpec::<2> {
            pivot: [0.0, 0.0],
            rotation: RotationLaw::ConstantRate { period: TAU / 0.3 },
            translation: TranslationLaw::Fixed { base: [0.0, 0.0] },
            rotation_axis: 2,
        };
        let v = spec.body_velocity([2.0, 0.0], 0.0);
        assert!(v[0].abs() < 1e-14);
        assert!((v[1] - 0.6).abs() < 1e-14);
    }

    #[test]
    fn pump_translation_law_at_quarter_period() {
        // x_ref = (xi - 30 + 50, eta - 25 + 25 sin(2 pi t / Nt) + 50) with
        // dx = 1; at t = Nt/4 the sine is 1.
        let nt = 3000.0;
        let spec = MotionSpec::<2> {
            pivot: [30.0, 25.0],
            rotation: RotationLaw::None,
            translation: TranslationLaw::Sinusoidal {
                base: [50.0, 50.0],
                amplitude: [0.0, 25.0],
                period: nt,
            },
            rotation_axis: 2,
        };
        let x = spec.body_position([12.0, 40.0], nt / 4.0);
        assert!((x[0] - (12.0 - 30.0 + 50.0)).abs() < 1e-12);
        assert!((x[1] - (40.0 - 25.0 + 75.0)).abs() < 1e-12);
    }

    #[test]
    fn velocity_is_derivative_of_position() {
        let specs = vec![
            MotionSpec::<2> {
                pivot: [50.0, 50.0],
                rotation: RotationLaw::ConstantRate { period: 3000.0 },
                translation: TranslationLaw::Fixed { base: [75.0, 75.0] },
                rotation_axis: 2,
            },
            MotionSpec::<2> {
                pivot: [30.0, 25.0],
                rotation: RotationLaw::None,
                translation: TranslationLaw::Sinusoidal {
                    base: [50.0, 50.0],
                    amplitude: [0.0, 25.0],
                    period: 3000.0,
                },
                rotation_axis: 2,
            },
            MotionSpec::<2> {
                pivot: [1.0, 2.0],
                rotation: RotationLaw::ConstantRate { period: 700.0 },
                translation: TranslationLaw::ConstantVelocity {
                    base: [0.0, 0.0],
                    velocity: [0.01, -0.02],
                },
                rotation_axis: 2,
            },
        ];
        let h = 1e-4;
        for spec in specs {
            for &t in &[0.0, 123.4, 2999.0] {
                for xi in [[10.0, 20.0], [80.0, 5.0]] {
                    let v = spec.body_velocity(xi, t);
                    let xp = spec.body_position(xi, t + h);
                    let xm = spec.body_position(xi, t - h);
                    for a in 0..2 {
                        let fd = (xp[a] - xm[a]) / (2.0 * h);
                        assert!(
                            (v[a] - fd).abs() <= 1e-8 * (1.0 + v[a].abs()),
                            "velocity/position mismatch: {} vs {}",
                            v[a],
                            fd
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn rigid_motion_preserves_distances() {
        let spec = MotionSpec::<2> {
            pivot: [50.0, 50.0],
            rotation: RotationLaw::ConstantRate { period: 3000.0 },
            translation: TranslationLaw::Sinusoidal {
                base: [75.0, 75.0],
                amplitude: [5.0, 10.0],
                period: 1700.0,
            },
            rotation_axis: 2,
        };
        let xi1: [f64; 2] = [13.0, 77.0];
        let xi2: [f64; 2] = [91.0, 4.0];
        let d0 = ((xi1[0] - xi2[0]).powi(2) + (xi1[1] - xi2[1]).powi(2)).sqrt();
        for k in 0..20 {
            let t = k as f64 * 211.7;
            let x1 = spec.body_position(xi1, t);
            let x2 = spec.body_position(xi2, t);
            let d = ((x1[0] - x2[0]).powi(2) + (x1[1] - x2[1]).powi(2)).sqrt();
            assert!((d - d0).abs() < 1e-12 * d0);
        }
    }

    #[test]
    fn z_axis_rotation_in_3d_keeps_axis_coordinate() {
        let spec = MotionSpec::<3> {
            pivot: [50.0, 50.0, 10.0],
            rotation: RotationLaw::ConstantRate { period: 3000.0 },
            translation: TranslationLaw::Fixed { base: [75.0, 75.0, 10.0] },
            rotation_axis: 2,
        };
        let x = spec.body_position([60.0, 50.0, 14.0], 750.0); // quarter turn
        assert!((x[2] - 14.0).abs() < 1e-12);
        assert!((x[0] - 75.0).abs() < 1e-9 && (x[1] - 85.0).abs() < 1e-9);
        // Rotation matrix orthonormality via distance preservation to the pivot.
        let r0 = (10.0f64 * 10.0 + 16.0).sqrt();
        let dx = [x[0] - 75.0, x[1] - 75.0, x[2] - 10.0];
        let r = (dx[0] * dx[0] + dx[1] * dx[1] + dx[2] * dx[2]).sqrt();
        assert!((r - r0).abs() < 1e-12 * r0);
    }

    #[test]
    fn rotor_case_pivot_mapping() {
        // Rotation about analysis point (75, 75) with design pivot (50, 50):
        // at t = 0 the design center lands on the rotation center.
        let spec = MotionSpec::<2> {
            pivot: [50.0, 50.0],
            rotation: RotationLaw::ConstantRate { period: 3000.0 },
            translation: TranslationLaw::Fixed { base: [75.0, 75.0] },
            rotation_axis: 2,
        };
        assert_eq!(spec.body_position([50.0, 50.0], 0.0), [75.0, 75.0]);
        let x = spec.body_position([50.0, 50.0], 1234.0);
        assert!((x[0] - 75.0).abs() < 1e-12 && (x[1] - 75.0).abs() < 1e-12);
        let _ = PI;
    }
}
