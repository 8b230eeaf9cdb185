//! Method of moving asymptotes for box-bounded designs with one inequality
//! constraint.
//!
//! Each update builds the separable convex approximation around the current
//! iterate, adapts the asymptotes from the oscillation history, and solves
//! the subproblem through its dual: with a single constraint the dual is a
//! one-dimensional monotone root find in the multiplier, which bisection
//! handles deterministically.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MmaError {
    #[error("non-finite value in MMA inputs")]
    NonFinite,
    #[error("design and gradient lengths differ: {x} vs {g}")]
    LengthMismatch { x: usize, g: usize },
}

/// Persistent optimizer state.
#[derive(Clone, Debug)]
pub struct MmaState {
    n: usize,
    iter: usize,
    low: Vec<f64>,
    upp: Vec<f64>,
    xold1: Vec<f64>,
    xold2: Vec<f64>,
    /// Per-step move limit as a fraction of the box range.
    pub move_limit: f64,
}

const ASY_INIT: f64 = 0.5;
const ASY_INCR: f64 = 1.2;
const ASY_DECR: f64 = 0.7;
const RAA0: f64 = 1e-5;
const X_MIN: f64 = 0.0;
const X_MAX: f64 = 1.0;

impl MmaState {
    pub fn new(n: usize, move_limit: f64) -> Self {
        Self {
            n,
            iter: 0,
            low: vec![X_MIN - ASY_INIT; n],
            upp: vec![X_MAX + ASY_INIT; n],
            xold1: vec![0.0; n],
            xold2: vec![0.0; n],
            move_limit,
        }
    }

    /// One design update. `df0` is the objective gradient, `f1` the
    /// constraint value (feasible when <= 0) and `df1` its gradient.
    pub fn update(
        &mut self,
        x: &[f64],
        df0: &[f64],
        f1: f64,
        df1: &[f64],
    ) -> Result<Vec<f64>, MmaError> {
        let n = self.n;
        if x.len() != n || df0.len() != n || df1.len() != n {
            return Err(MmaError::LengthMismatch { x: x.len(), g: df0.len() });
        }
        if !f1.is_finite()
            || x.iter().chain(df0).chain(df1).any(|v| !v.is_finite())
        {
            return Err(MmaError::NonFinite);
        }
        self.iter += 1;

        // Asymptote adaptation.
        if self.iter <= 2 {
            for j in 0..n {
                self.low[j] = x[j] - ASY_INIT * (X_MAX - X_MIN);
                self.upp[j] = x[j] + ASY_INIT * (X_MAX - X_MIN);
            }
        } else {
            for j in 0..n {
                let osc = (x[j] - self.xold1[j]) * (self.xold1[j] - self.xold2[j]);
                let factor = if osc > 0.0 {
                    ASY_INCR
                } else if osc < 0.0 {
                    ASY_DECR
                } else {
                    1.0
                };
                self.low[j] = x[j] - factor * (self.xold1[j] - self.low[j]);
                self.upp[j] = x[j] + factor * (self.upp[j] - self.xold1[j]);
                self.low[j] = self.low[j].clamp(x[j] - 10.0, x[j] - 0.01);
                self.upp[j] = self.upp[j].clamp(x[j] + 0.01, x[j] + 10.0);
            }
        }

        // Feasible move box inside the asymptotes.
        let mut alpha = vec![0.0; n];
        let mut beta = vec![0.0; n];
        for j in 0..n {
            alpha[j] = (self.low[j] + 0.1 * (x[j] - self.low[j]))
                .max(x[j] - self.move_limit)
                .max(X_MIN);
            beta[j] = (self.upp[j] - 0.1 * (self.upp[j] - x[j]))
                .min(x[j] + self.move_limit)
                .min(X_MAX);
        }

        // Separable approximation coefficients.
        let mut p0 = vec![0.0; n];
        let mut q0 = vec![0.0; n];
        let mut p1 = vec![0.0; n];
        let mut q1 = vec![0.0; n];
        let mut r1 = f1;
        for j in 0..n {
            let ux = self.upp[j] - x[j];
            let xl = x[j] - self.low[j];
            let dp = df0[j].max(0.0);
            let dm = (-df0[j]).max(0.0);
            p0[j] = ux * ux * (1.001 * dp + 0.001 * dm + RAA0);
            q0[j] = xl * xl * (0.001 * dp + 1.001 * dm + RAA0);
            let cp = df1[j].max(0.0);
            let cm = (-df1[j]).max(0.0);
            p1[j] = ux * ux * (1.001 * cp + 0.001 * cm);
            q1[j] = xl * xl * (0.001 * cp + 1.001 * cm);
            r1 -= p1[j] / ux + q1[j] / xl;
        }

        let primal = |lambda: f64, out: &mut [f64]| {
            for j in 0..n {
                let pl = p0[j] + lambda * p1[j];
                let ql = q0[j] + lambda * q1[j];
                let sp = pl.sqrt();
                let sq = ql.sqrt();
                let xj = (self.low[j] * sp + self.upp[j] * sq) / (sp + sq);
                out[j] = xj.clamp(alpha[j], beta[j]);
            }
        };
        let constraint = |xs: &[f64]| -> f64 {
            let mut g = r1;
            for j in 0..n {
                g += p1[j] / (self.upp[j] - xs[j]) + q1[j] / (xs[j] - self.low[j]);
            }
            g
        };

        let mut xnew = vec![0.0; n];
        primal(0.0, &mut xnew);
        if constraint(&xnew) > 0.0 {
            // The dual derivative is decreasing in lambda; bracket then bisect.
            let mut hi = 1.0;
            let mut probe = vec![0.0; n];
            let mut bracketed = false;
            for _ in 0..60 {
                primal(hi, &mut probe);
                if constraint(&probe) <= 0.0 {
                    bracketed = true;
                    break;
                }
                hi *= 2.0;
            }
            if bracketed {
                let mut lo = 0.0;
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    primal(mid, &mut probe);
                    if constraint(&probe) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                primal(hi, &mut xnew);
            } else {
                // Constraint unattainable inside the move box: return the
                // most feasible point and let continuation recover over the
                // following iterations.
                primal(hi, &mut xnew);
            }
        }

        self.xold2.copy_from_slice(&self.xold1);
        self.xold1.copy_from_slice(x);
        Ok(xnew)
    }
}
