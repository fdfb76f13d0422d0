//! Deterministic LQ and deterministic-coefficient SLQ: Riccati solvers,
//! feedback synthesis, exact and Monte Carlo cost evaluation, and numerical
//! checks of the value, completion-of-squares and duality identities.

mod coefficients;
mod cost;
mod identities;
mod instances;
mod solve;

pub use coefficients::{Coefficient, CoefficientSet, FrozenCoefficients};
pub use cost::{
    lyapunov_cost, mc_cost, mc_cost_with_noise, CostMethod, CostReport, NodeFeedback, Noise,
    OpenLoop, Policy,
};
pub use identities::{
    adjoint_identity_check, completion_of_squares_check, completion_of_squares_check_with_noise,
    transposition_identity_check, transposition_identity_check_with_noise, AdjointResidual,
    IdentityCheck, TranspositionInputs,
};
pub use instances::{random_instance, random_lq_instance};
pub use solve::{
    feedback_value, solve_bsre_det, solve_bsre_det_with, solve_riccati_det,
    solve_riccati_det_with, RiccatiOptions, RiccatiSolution, K_MIN, R_MIN,
};

use thiserror::Error;

use crate::kernels::{KernelError, Mat, Vector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RiccatiError {
    #[error("R is not uniformly positive: min eigenvalue {min_eigenvalue:e} at t = {t}")]
    SingularR { t: f64, min_eigenvalue: f64 },
    #[error("K = R + D'PD lost positivity: min eigenvalue {min_eigenvalue:e} at t = {t}")]
    SingularK { t: f64, min_eigenvalue: f64 },
    #[error("solution left the finite range after t = {last_valid_time} (step {step})")]
    NonFinite { last_valid_time: f64, step: usize },
    #[error("path {path} became non-finite at step {step}")]
    PathNonFinite { path: usize, step: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Kernel(KernelError),
}

impl From<KernelError> for RiccatiError {
    fn from(e: KernelError) -> Self {
        match e {
            KernelError::NonFinite {
                last_valid_time,
                step,
            } => Self::NonFinite {
                last_valid_time,
                step,
            },
            KernelError::PathNonFinite { path, step } => Self::PathNonFinite { path, step },
            other => Self::Kernel(other),
        }
    }
}

/// Initial data: a deterministic state or the second moment `E[x0 x0']` of a
/// random one.
#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    Point(Vector),
    SecondMoment(Mat),
}

impl InitialState {
    pub fn dim(&self) -> usize {
        match self {
            Self::Point(v) => v.len(),
            Self::SecondMoment(s) => s.nrows(),
        }
    }

    pub fn second_moment(&self) -> Mat {
        match self {
            Self::Point(v) => v * v.transpose(),
            Self::SecondMoment(s) => s.clone(),
        }
    }
}

impl From<Vector> for InitialState {
    fn from(v: Vector) -> Self {
        Self::Point(v)
    }
}
