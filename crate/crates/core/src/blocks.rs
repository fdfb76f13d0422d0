//! Block-diagonal problems and the `Φ = (R + P)^{-1}` transform, solved by a
//! Newton-type Picard iteration and cross-checked against the direct Riccati
//! solver.

use rayon::prelude::*;
use thiserror::Error;

use crate::kernels::{
    canonical_sum, integrate_ode, max_abs, min_eigenvalue, symmetrize, Direction,
    HermiteTrajectory, Mat, TimeGrid, Vector,
};
use crate::riccati::{
    feedback_value, solve_bsre_det, Coefficient, CoefficientSet, InitialState, RiccatiError,
    RiccatiSolution,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BlocksError {
    #[error("Picard iteration did not reach tolerance in {max_iter} iterations (last gap {gap:e})")]
    NotConverged { max_iter: usize, gap: f64 },
    #[error("Φ lost positive definiteness in iterate {iteration} at t = {t}")]
    SingularPhi { iteration: usize, t: f64 },
    #[error("structural condition fails: identity residual {identity_residual:e}, Q̃ margin {margin:e}")]
    As8Violated { identity_residual: f64, margin: f64 },
    #[error("invalid block: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
}

/// One diagonal block with the decomposition `dR = R1 dt + R2 dW` of its
/// control weight. Missing `r1` defaults to a finite-difference derivative of
/// `R(t)`; missing `r2` to zero.
#[derive(Debug, Clone)]
pub struct PhiBlock {
    pub coeffs: CoefficientSet,
    pub r1: Option<Coefficient>,
    pub r2: Option<Coefficient>,
}

impl PhiBlock {
    pub fn new(coeffs: CoefficientSet) -> Self {
        Self {
            coeffs,
            r1: None,
            r2: None,
        }
    }

    pub fn r1_at(&self, t: f64, grid: &TimeGrid) -> Mat {
        match &self.r1 {
            Some(c) => c.at(t),
            None => derivative(&self.coeffs.r, t, grid),
        }
    }

    pub fn r2_at(&self, t: f64) -> Mat {
        match &self.r2 {
            Some(c) => c.at(t),
            None => Mat::zeros(self.coeffs.m, self.coeffs.m),
        }
    }

    /// Substitutes `v = D u`: returns the block with `D = I`, `B D^{-1}` and
    /// `D^{-T} R D^{-1}`. A user-supplied `R1` is kept only if `D` is already
    /// the identity; otherwise it is recomputed from the transformed `R(t)`.
    pub fn normalized(&self, grid: &TimeGrid) -> Result<PhiBlock, BlocksError> {
        let c = &self.coeffs;
        if c.n != c.m {
            return Err(BlocksError::InvalidInput(format!(
                "the transform needs square blocks, got n = {}, m = {}",
                c.n, c.m
            )));
        }
        let eye = Mat::identity(c.m, c.m);
        if grid.times().all(|t| c.d.at(t) == eye) {
            return Ok(self.clone());
        }
        for t in grid.times() {
            if c.d.at(t).try_inverse().is_none() {
                return Err(BlocksError::InvalidInput(format!("D is singular at t = {t}")));
            }
        }
        let (b, d, r) = (c.b.clone(), c.d.clone(), c.r.clone());
        let m = c.m;
        let inv = move |dd: &Coefficient, t: f64| {
            dd.at(t).try_inverse().unwrap_or_else(|| Mat::from_element(m, m, f64::NAN))
        };
        let d1 = d.clone();
        let new_b = Coefficient::function(c.n, m, move |t| b.at(t) * inv(&d1, t));
        let new_r = Coefficient::function(m, m, move |t| {
            let di = inv(&d, t);
            symmetrize(&(di.transpose() * r.at(t) * di))
        });
        let mut coeffs = c.clone();
        coeffs.b = new_b;
        coeffs.r = new_r;
        coeffs.d = eye.into();
        Ok(PhiBlock {
            coeffs,
            r1: None,
            r2: self.r2.clone(),
        })
    }
}

/// Central finite difference of a coefficient, one-sided at the ends of the
/// grid interval.
fn derivative(c: &Coefficient, t: f64, grid: &TimeGrid) -> Mat {
    if c.is_constant() {
        let (r, k) = c.shape();
        return Mat::zeros(r, k);
    }
    let h = 1e-5 * (grid.t_end() - grid.t0()).max(1.0);
    let lo = (t - h).max(grid.t0());
    let hi = (t + h).min(grid.t_end());
    (c.at(hi) - c.at(lo)) / (hi - lo)
}

#[derive(Debug, Clone)]
pub struct BlockSet {
    pub blocks: Vec<PhiBlock>,
    /// Upper bound on block sizes.
    pub max_block: usize,
}

impl BlockSet {
    pub fn new(blocks: Vec<PhiBlock>, max_block: usize) -> Result<Self, BlocksError> {
        if blocks.is_empty() {
            return Err(BlocksError::InvalidInput("no blocks".into()));
        }
        if let Some((i, b)) = blocks
            .iter()
            .enumerate()
            .find(|(_, b)| b.coeffs.n > max_block || b.coeffs.m > max_block)
        {
            return Err(BlocksError::InvalidInput(format!(
                "block {i} has size {}x{}, above the bound {max_block}",
                b.coeffs.n, b.coeffs.m
            )));
        }
        Ok(Self { blocks, max_block })
    }

    pub fn state_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.coeffs.n).sum()
    }

    pub fn control_dim(&self) -> usize {
        self.blocks.iter().map(|b| b.coeffs.m).sum()
    }

    /// The whole system as one block-diagonal coefficient set.
    pub fn to_coefficient_set(&self) -> CoefficientSet {
        let blocks: Vec<CoefficientSet> = self.blocks.iter().map(|b| b.coeffs.clone()).collect();
        let (n, m) = (self.state_dim(), self.control_dim());
        let field = |pick: fn(&CoefficientSet) -> &Coefficient, rows: usize, cols: usize| {
            let parts: Vec<Coefficient> = blocks.iter().map(|b| pick(b).clone()).collect();
            if parts.iter().all(Coefficient::is_constant) {
                let mats: Vec<Mat> = parts.iter().map(|c| c.at(0.0)).collect();
                return Coefficient::Constant(block_diagonal(&mats));
            }
            Coefficient::function(rows, cols, move |t| {
                let mats: Vec<Mat> = parts.iter().map(|c| c.at(t)).collect();
                block_diagonal(&mats)
            })
        };
        let g: Vec<Mat> = blocks.iter().map(|b| b.g.clone()).collect();
        CoefficientSet {
            n,
            m,
            a: field(|b| &b.a, n, n),
            a1: field(|b| &b.a1, n, n),
            b: field(|b| &b.b, n, m),
            c: field(|b| &b.c, n, n),
            d: field(|b| &b.d, n, m),
            q: field(|b| &b.q, n, n),
            r: field(|b| &b.r, m, m),
            g: block_diagonal(&g),
        }
    }
}

/// Block-diagonal matrix with the given (possibly rectangular) blocks.
pub fn block_diagonal(blocks: &[Mat]) -> Mat {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Mat::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Diagnostics of the structural condition
/// `R B + C'R + R2 = 0`, `Q̃ = Q - R1 + C'RC + R(BC - A*) + (BC - A*)'R >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct As8Report {
    pub pass: bool,
    /// Max over nodes of `max |R B + C'R + R2|`.
    pub identity_residual: f64,
    /// Smallest eigenvalue of `Q̃` per grid node.
    pub q_tilde_min: Vec<f64>,
    /// `min` of `q_tilde_min`.
    pub margin: f64,
}

pub const AS8_TOL: f64 = 1e-10;

pub fn q_tilde(block: &PhiBlock, t: f64, grid: &TimeGrid) -> Mat {
    let c = block.coeffs.at(t);
    let shift = &c.b * &c.c - &c.a;
    let raw = &c.q - block.r1_at(t, grid)
        + c.c.transpose() * &c.r * &c.c
        + &c.r * &shift
        + shift.transpose() * &c.r;
    symmetrize(&raw)
}

pub fn validate_as8(block: &PhiBlock, grid: &TimeGrid) -> As8Report {
    let coeffs = &block.coeffs;
    if coeffs.n != coeffs.m {
        return As8Report {
            pass: false,
            identity_residual: f64::INFINITY,
            q_tilde_min: Vec::new(),
            margin: f64::NEG_INFINITY,
        };
    }
    let mut identity_residual = 0.0f64;
    let mut q_tilde_min = Vec::with_capacity(grid.nodes());
    for t in grid.times() {
        let c = coeffs.at(t);
        let id = &c.r * &c.b + c.c.transpose() * &c.r + block.r2_at(t);
        identity_residual = identity_residual.max(max_abs(&id));
        q_tilde_min.push(min_eigenvalue(&q_tilde(block, t, grid)));
    }
    let margin = q_tilde_min.iter().copied().fold(f64::INFINITY, f64::min);
    As8Report {
        pass: identity_residual <= AS8_TOL && margin >= -AS8_TOL,
        identity_residual,
        q_tilde_min,
        margin,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhiOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for PhiOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiIterate {
    pub index: usize,
    pub phi: Vec<Mat>,
    /// `max_t max |Φ_index - Φ_{index-1}|`
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhiSolution {
    pub grid: TimeGrid,
    pub iterates: Vec<PhiIterate>,
    /// `Φ^{-1} - R` from the last iterate, in the normalized control variable.
    pub p: Vec<Mat>,
}

impl PhiSolution {
    pub fn iterations(&self) -> usize {
        self.iterates.len()
    }

    pub fn phi(&self) -> &[Mat] {
        &self.iterates.last().expect("at least one iterate").phi
    }

    pub fn gaps(&self) -> Vec<f64> {
        self.iterates.iter().map(|it| it.gap).collect()
    }
}

/// Solves `Φ' = ĀΦ + ΦĀ' - BΦB' + ΦQ̃Φ`, `Φ(T) = (R(T) + G)^{-1}`,
/// `Ā = A* - BC`, on the block normalized to `D = I`, by iterating the
/// linearization
/// `Φ'_{n+1} = ĀΦ_{n+1} + Φ_{n+1}Ā' - BΦ_{n+1}B' + Φ_{n+1}Q̃Φ_n + Φ_nQ̃Φ_{n+1} - Φ_nQ̃Φ_n`
/// from `Φ_0 ≡ Φ(T)`. Returns the iterates and `P = Φ^{-1} - R`.
pub fn phi_picard_solve(
    block: &PhiBlock,
    grid: &TimeGrid,
    opts: &PhiOptions,
) -> Result<PhiSolution, BlocksError> {
    block.coeffs.validate(grid, crate::riccati::R_MIN)?;
    let block = block.normalized(grid)?;
    let report = validate_as8(&block, grid);
    if !report.pass {
        return Err(BlocksError::As8Violated {
            identity_residual: report.identity_residual,
            margin: report.margin,
        });
    }
    if grid
        .times()
        .any(|t| max_abs(&block.r2_at(t)) > 0.0)
    {
        return Err(BlocksError::InvalidInput(
            "a martingale part of R is not supported for deterministic coefficients".into(),
        ));
    }
    let coeffs = &block.coeffs;
    let t_end = grid.t_end();
    let terminal = (coeffs.r.at(t_end) + &coeffs.g)
        .try_inverse()
        .map(|m| symmetrize(&m))
        .ok_or_else(|| BlocksError::InvalidInput("R(T) + G is singular".into()))?;
    let frozen = |t: f64| {
        let c = coeffs.at(t);
        let abar = &c.a - &c.b * &c.c;
        (abar, c.b, q_tilde(&block, t, grid))
    };
    let linear_field = |t: f64, phi: &Mat, prev: &Mat| -> Mat {
        let (abar, b, qt) = frozen(t);
        &abar * phi + phi * abar.transpose() - &b * phi * b.transpose()
            + phi * &qt * prev
            + prev * &qt * phi
            - prev * &qt * prev
    };

    let mut prev = HermiteTrajectory::new(
        *grid,
        vec![terminal.clone(); grid.nodes()],
        vec![Mat::zeros(coeffs.m, coeffs.m); grid.nodes()],
    )
    .map_err(RiccatiError::from)?;
    let mut iterates: Vec<PhiIterate> = Vec::new();
    for index in 1..=opts.max_iter {
        let values = integrate_ode(
            |t, phi: &Mat| linear_field(t, phi, &prev.at(t)),
            terminal.clone(),
            grid,
            Direction::Backward,
        )
        .map_err(RiccatiError::from)?;
        let values: Vec<Mat> = values.iter().map(symmetrize).collect();
        for (k, phi) in values.iter().enumerate() {
            if !(min_eigenvalue(phi) > 0.0) {
                return Err(BlocksError::SingularPhi {
                    iteration: index,
                    t: grid.time(k),
                });
            }
        }
        let gap = values
            .iter()
            .zip(prev.values())
            .map(|(a, b)| max_abs(&(a - b)))
            .fold(0.0, f64::max);
        let slopes = values
            .iter()
            .enumerate()
            .map(|(k, phi)| linear_field(grid.time(k), phi, &prev.values()[k]))
            .collect();
        prev = HermiteTrajectory::new(*grid, values.clone(), slopes).map_err(RiccatiError::from)?;
        iterates.push(PhiIterate {
            index,
            phi: values,
            gap,
        });
        if gap <= opts.tol {
            let p = prev
                .values()
                .iter()
                .enumerate()
                .map(|(k, phi)| {
                    let inv = phi.clone().try_inverse().expect("positive definite");
                    symmetrize(&(inv - coeffs.r.at(grid.time(k))))
                })
                .collect();
            return Ok(PhiSolution {
                grid: *grid,
                iterates,
                p,
            });
        }
    }
    Err(BlocksError::NotConverged {
        max_iter: opts.max_iter,
        gap: iterates.last().map_or(f64::INFINITY, |it| it.gap),
    })
}

#[derive(Debug, Clone)]
pub struct Assembly {
    pub solutions: Vec<RiccatiSolution>,
    /// `½<P_k(t0) η_k, η_k>` per block.
    pub contributions: Vec<f64>,
    /// Order-independent sum of the contributions.
    pub total: f64,
}

impl Assembly {
    pub fn p0(&self) -> Mat {
        let blocks: Vec<Mat> = self.solutions.iter().map(|s| s.p0().clone()).collect();
        block_diagonal(&blocks)
    }

    /// Block-diagonal feedback gains at every grid node.
    pub fn theta(&self) -> Vec<Mat> {
        let nodes = self.solutions[0].theta.len();
        (0..nodes)
            .map(|k| {
                let blocks: Vec<Mat> = self.solutions.iter().map(|s| s.theta[k].clone()).collect();
                block_diagonal(&blocks)
            })
            .collect()
    }
}

/// Solves every block directly and sums the block values.
pub fn assemble_blocks(
    set: &BlockSet,
    grid: &TimeGrid,
    etas: &[Vector],
) -> Result<Assembly, BlocksError> {
    if etas.len() != set.blocks.len() {
        return Err(BlocksError::InvalidInput(format!(
            "{} initial states for {} blocks",
            etas.len(),
            set.blocks.len()
        )));
    }
    let results = set
        .blocks
        .par_iter()
        .zip(etas.par_iter())
        .map(|(b, eta)| -> Result<(RiccatiSolution, f64), BlocksError> {
            let sol = solve_bsre_det(&b.coeffs, grid)?;
            let v = feedback_value(&sol, &InitialState::Point(eta.clone()))?;
            Ok((sol, v))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    let (solutions, contributions): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(Assembly {
        total: canonical_sum(&contributions),
        solutions,
        contributions,
    })
}

/// Scalar heat-equation mode: drift `a1 - λ̂`, control `b1`, state noise
/// `-b1`, control noise `b2`, weights `q`, `r(t)`, `g`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeatModeData {
    pub lambda_hat: f64,
    pub a1: f64,
    pub b1: f64,
    pub b2: f64,
    pub q: f64,
    /// `r(t) = r_init + r0 t`
    pub r_init: f64,
    pub r0: f64,
    pub g: f64,
}

impl HeatModeData {
    pub fn block(&self) -> PhiBlock {
        let s = |v: f64| Mat::from_element(1, 1, v);
        let (r_init, r0) = (self.r_init, self.r0);
        let r = if r0 == 0.0 {
            Coefficient::Constant(s(r_init))
        } else {
            Coefficient::function(1, 1, move |t| Mat::from_element(1, 1, r_init + r0 * t))
        };
        let coeffs = CoefficientSet::new(1, 1)
            .with_a(s(-self.lambda_hat))
            .with_a1(s(self.a1))
            .with_b(s(self.b1))
            .with_c(s(-self.b1))
            .with_d(s(self.b2))
            .with_q(s(self.q))
            .with_r(r)
            .with_g(s(self.g));
        PhiBlock {
            coeffs,
            r1: Some(Coefficient::Constant(s(r0))),
            r2: None,
        }
    }

    /// `q - r0 - b1² r - 2 a1 r + 2 λ̂ r` at time `t`.
    pub fn margin(&self, t: f64) -> f64 {
        let r = self.r_init + self.r0 * t;
        self.q - self.r0 - self.b1 * self.b1 * r - 2.0 * self.a1 * r + 2.0 * self.lambda_hat * r
    }
}
