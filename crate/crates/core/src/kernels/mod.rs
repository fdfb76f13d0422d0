//! Shared numerical primitives: time grids, fixed-step RK4, seeded Brownian
//! increments, Euler–Maruyama and the symmetric pseudo-inverse.

mod brownian;
mod linalg;
mod ode;
mod sde;

pub use brownian::{path_increments, path_rng, sample_brownian, IncrementBatch};
pub use linalg::{
    frobenius, is_psd, max_abs, min_eigenvalue, pinv_psd, spd_solve, symmetrize, PseudoInverse,
    ASYMMETRY_GUARD, DEFAULT_PINV_TOL,
};
pub use ode::{integrate_ode, rk4_step, Direction, HermiteTrajectory, OdeState, OVERFLOW_GUARD};
pub use sde::{euler_maruyama, PathBatch};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KernelError {
    #[error("invalid time grid: {0}")]
    BadGrid(String),
    #[error("state left the finite range after t = {last_valid_time} (step {step})")]
    NonFinite { last_valid_time: f64, step: usize },
    #[error("path {path} became non-finite at step {step}")]
    PathNonFinite { path: usize, step: usize },
    #[error("matrix is not symmetric (asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Uniform grid `t0 < t0 + dt < ... < t_end` with `steps` intervals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    t_end: f64,
    steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t_end: f64, steps: usize) -> Result<Self, KernelError> {
        if steps == 0 {
            return Err(KernelError::BadGrid("steps must be at least 1".into()));
        }
        if !(t0.is_finite() && t_end.is_finite()) || t_end <= t0 {
            return Err(KernelError::BadGrid(format!(
                "need finite t0 < T, got [{t0}, {t_end}]"
            )));
        }
        Ok(Self { t0, t_end, steps })
    }

    /// Grid on `[t0, t_end]` whose step is as close as possible to `dt`.
    pub fn with_step(t0: f64, t_end: f64, dt: f64) -> Result<Self, KernelError> {
        if !(dt > 0.0) {
            return Err(KernelError::BadGrid(format!("dt must be positive, got {dt}")));
        }
        let steps = ((t_end - t0) / dt).round().max(1.0) as usize;
        Self::new(t0, t_end, steps)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn nodes(&self) -> usize {
        self.steps + 1
    }

    pub fn dt(&self) -> f64 {
        (self.t_end - self.t0) / self.steps as f64
    }

    /// Time of node `k`; the last node is exactly `t_end`.
    pub fn time(&self, k: usize) -> f64 {
        if k >= self.steps {
            self.t_end
        } else {
            self.t0 + k as f64 * self.dt()
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.nodes()).map(|k| self.time(k))
    }

    /// Interval index containing `t`, clamped to `[0, steps - 1]`.
    pub fn interval(&self, t: f64) -> usize {
        let raw = ((t - self.t0) / self.dt()).floor();
        if raw <= 0.0 {
            0
        } else {
            (raw as usize).min(self.steps - 1)
        }
    }

    /// Same interval with `factor` times as many steps.
    pub fn refine(&self, factor: usize) -> Self {
        Self {
            steps: self.steps * factor.max(1),
            ..*self
        }
    }
}

/// Sample mean and standard error of the mean.
pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Order-independent sum: sorts before adding so that any permutation of the
/// inputs gives a bit-identical result.
pub fn canonical_sum(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    sorted.iter().sum()
}
