//! Binomial-tree surrogate for backward Riccati equations with random
//! coefficients. The noise is Rademacher (`w = ±1` with probability ½ each),
//! so every conditional expectation is an exact two-term average.
//!
//! Node `(k, h)` at time `k` carries the history `h < 2^k`: bit `j` of `h` is
//! set when `w_j = +1`. Its children are `h` (for `w_k = -1`) and
//! `h | 1 << k` (for `w_k = +1`).

mod checks;
mod model;
mod oracle;
mod solve;

pub use checks::{
    closed_loop_value, feedback_family_check, feedback_family_gap, tree_completion_check,
    TreeControl,
};
pub use model::{random_tree_model, RandomTreeOptions, TreeCoefficients, TreeModel, MAX_DEPTH};
pub use oracle::{qp_oracle, QpSolution, MAX_ORACLE_CONTROLS, MAX_ORACLE_DEPTH};
pub use solve::{solve_bsre_tree, solve_bsre_tree_flagged, TreeSolution, RANGE_TOL};

use thiserror::Error;

use crate::kernels::KernelError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TreeError {
    #[error("range condition fails at time {time}, node {node}: no optimal feedback exists there")]
    RangeConditionViolated { time: usize, node: usize },
    #[error("quadratic cost is unbounded below (Hessian eigenvalue {min_eigenvalue:e})")]
    Infeasible { min_eigenvalue: f64 },
    #[error("invalid tree model: {0}")]
    InvalidModel(String),
    #[error("problem too large: {0}")]
    TooLarge(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Child of node `h` at time `k` along `w_k = ±1`.
pub fn child(k: usize, h: usize, up: bool) -> usize {
    if up {
        h | (1 << k)
    } else {
        h
    }
}

/// Noise value `w_k` recorded in history `h`.
pub fn noise_at(h: usize, k: usize) -> f64 {
    if h & (1 << k) != 0 {
        1.0
    } else {
        -1.0
    }
}
