//! Spectral truncation of controlled stochastic heat, wave and Schrödinger
//! equations on `(0, π)` with Dirichlet conditions. Eigenpairs are
//! `sin(jx)`, `j²`; with spatially constant coefficients every mode is an
//! independent small block.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use thiserror::Error;

use crate::blocks::{validate_as8, PhiBlock};
use crate::kernels::{canonical_sum, min_eigenvalue, Mat, TimeGrid, Vector};
use crate::riccati::{
    feedback_value, solve_bsre_det, Coefficient, CoefficientSet, InitialState, RiccatiError,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("unknown equation kind {0:?} (expected heat, wave or schrodinger)")]
    BadKind(String),
    #[error("truncation level must be at least 1, got {0}")]
    BadN(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("mode {mode}: {source}")]
    Mode {
        mode: usize,
        #[source]
        source: RiccatiError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SpectralKind {
    Heat,
    Wave,
    Schrodinger,
}

impl SpectralKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Heat => "heat",
            Self::Wave => "wave",
            Self::Schrodinger => "schrodinger",
        }
    }

    /// State dimension of one mode block.
    pub fn mode_dim(self) -> usize {
        match self {
            Self::Heat => 1,
            Self::Wave | Self::Schrodinger => 2,
        }
    }
}

impl fmt::Display for SpectralKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SpectralKind {
    type Err = SpectralError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "heat" => Ok(Self::Heat),
            "wave" => Ok(Self::Wave),
            "schrodinger" | "schroedinger" | "schrödinger" => Ok(Self::Schrodinger),
            _ => Err(SpectralError::BadKind(s.to_string())),
        }
    }
}

/// Spatially constant coefficients. The control weight is
/// `r(t) = r_init + r0 t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralCoefficients {
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
    pub q: f64,
    pub r_init: f64,
    pub r0: f64,
    pub g: f64,
}

impl Default for SpectralCoefficients {
    /// A controlled heat instance with `a2 = -b1` and a positive structural
    /// margin on every mode.
    fn default() -> Self {
        Self {
            a1: 0.5,
            a2: -1.0,
            b1: 1.0,
            b2: 1.0,
            q: 1.0,
            r_init: 1.0,
            r0: 0.2,
            g: 1.0,
        }
    }
}

impl SpectralCoefficients {
    /// No control and no noise: every mode decays freely.
    pub fn uncontrolled() -> Self {
        Self {
            a1: 0.0,
            a2: 0.0,
            b1: 0.0,
            b2: 0.0,
            q: 0.0,
            r_init: 1.0,
            r0: 0.0,
            g: 1.0,
        }
    }

    pub fn r_at(&self, t: f64) -> f64 {
        self.r_init + self.r0 * t
    }

    fn validate(&self) -> Result<(), SpectralError> {
        let vals = [
            self.a1, self.a2, self.b1, self.b2, self.q, self.r_init, self.r0, self.g,
        ];
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(SpectralError::InvalidInput("coefficients must be finite".into()));
        }
        Ok(())
    }

    fn r_coefficient(&self, dim: usize) -> Coefficient {
        let (r_init, r0) = (self.r_init, self.r0);
        if r0 == 0.0 {
            Coefficient::Constant(Mat::identity(dim, dim) * r_init)
        } else {
            Coefficient::function(dim, dim, move |t| Mat::identity(dim, dim) * (r_init + r0 * t))
        }
    }
}

/// Dirichlet eigenvalue of `-d²/dx²` on `(0, π)` for mode `j >= 1`.
pub fn eigenvalue(j: usize) -> f64 {
    (j * j) as f64
}

#[derive(Debug, Clone)]
pub struct SpectralModel {
    pub kind: SpectralKind,
    pub coefficients: SpectralCoefficients,
    /// `λ̂_j`, `j = 1..=N`
    pub eigenvalues: Vec<f64>,
    /// Hilbert-Schmidt weights `λ_j`; `None` means `1/j`.
    pub weights: Option<Vec<f64>>,
    pub blocks: Vec<PhiBlock>,
}

impl SpectralModel {
    pub fn n_modes(&self) -> usize {
        self.blocks.len()
    }

    pub fn mode_dim(&self) -> usize {
        self.kind.mode_dim()
    }

    pub fn weight(&self, j: usize) -> Option<f64> {
        match &self.weights {
            None => Some(1.0 / j as f64),
            Some(w) => w.get(j - 1).copied(),
        }
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self, SpectralError> {
        if weights.iter().any(|w| !(*w > 0.0) || !w.is_finite()) {
            return Err(SpectralError::InvalidInput("weights must be positive".into()));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    /// Structural margin `min_t λ_min(Q̃)` of mode `j`; `None` for the wave
    /// blocks, whose control space differs from the state space.
    pub fn as8_margin(&self, j: usize, grid: &TimeGrid) -> Option<f64> {
        let block = &self.blocks[j - 1];
        (block.coeffs.n == block.coeffs.m).then(|| validate_as8(block, grid).margin)
    }
}

pub fn build_model(
    kind: SpectralKind,
    n: usize,
    coefficients: SpectralCoefficients,
) -> Result<SpectralModel, SpectralError> {
    if n == 0 {
        return Err(SpectralError::BadN(n));
    }
    coefficients.validate()?;
    let blocks = (1..=n)
        .map(|j| PhiBlock {
            coeffs: mode_block(kind, eigenvalue(j), &coefficients),
            r1: Some(Coefficient::Constant(
                Mat::identity(kind.mode_dim(), kind.mode_dim()) * coefficients.r0,
            )),
            r2: None,
        })
        .map(|mut b| {
            if kind == SpectralKind::Wave {
                b.r1 = Some(Coefficient::Constant(Mat::from_element(1, 1, coefficients.r0)));
            }
            b
        })
        .collect();
    Ok(SpectralModel {
        kind,
        coefficients,
        eigenvalues: (1..=n).map(eigenvalue).collect(),
        weights: None,
        blocks,
    })
}

/// Unperturbed generator of one mode.
pub fn mode_generator(kind: SpectralKind, lambda_hat: f64) -> Mat {
    match kind {
        SpectralKind::Heat => Mat::from_element(1, 1, -lambda_hat),
        SpectralKind::Wave => Mat::from_row_slice(2, 2, &[0.0, 1.0, -lambda_hat, 0.0]),
        // Real form of multiplication by -iλ̂ on (Re, Im).
        SpectralKind::Schrodinger => Mat::from_row_slice(2, 2, &[0.0, lambda_hat, -lambda_hat, 0.0]),
    }
}

fn mode_block(kind: SpectralKind, lambda_hat: f64, c: &SpectralCoefficients) -> CoefficientSet {
    let a = mode_generator(kind, lambda_hat);
    match kind {
        SpectralKind::Heat => {
            let s = |v: f64| Mat::from_element(1, 1, v);
            CoefficientSet::new(1, 1)
                .with_a(a)
                .with_a1(s(c.a1))
                .with_b(s(c.b1))
                .with_c(s(c.a2))
                .with_d(s(c.b2))
                .with_q(s(c.q))
                .with_r(c.r_coefficient(1))
                .with_g(s(c.g))
        }
        SpectralKind::Wave => {
            // Coefficients act on the velocity equation; the energy norm
            // weighs position by λ̂.
            let lower = |v: f64| Mat::from_row_slice(2, 2, &[0.0, 0.0, v, 0.0]);
            let col = |v: f64| Mat::from_column_slice(2, 1, &[0.0, v]);
            let energy = Mat::from_diagonal(&Vector::from_vec(vec![lambda_hat, 1.0]));
            CoefficientSet::new(2, 1)
                .with_a(a)
                .with_a1(lower(c.a1))
                .with_b(col(c.b1))
                .with_c(lower(c.a2))
                .with_d(col(c.b2))
                .with_q(&energy * c.q)
                .with_r(c.r_coefficient(1))
                .with_g(energy * c.g)
        }
        SpectralKind::Schrodinger => {
            let i2 = Mat::identity(2, 2);
            CoefficientSet::new(2, 2)
                .with_a(a)
                .with_a1(&i2 * c.a1)
                .with_b(&i2 * c.b1)
                .with_c(&i2 * c.a2)
                .with_d(&i2 * c.b2)
                .with_q(&i2 * c.q)
                .with_r(c.r_coefficient(2))
                .with_g(i2 * c.g)
        }
    }
}

/// Stiffness scale of the Riccati equation of mode `j`.
fn stiffness(kind: SpectralKind, lambda_hat: f64) -> f64 {
    match kind {
        SpectralKind::Heat | SpectralKind::Schrodinger => 2.0 * lambda_hat,
        SpectralKind::Wave => 2.0 * lambda_hat.sqrt(),
    }
}

/// Largest `stiffness * h` accepted before a mode is integrated on a refined
/// grid. Heat modes only decay, and RK4 keeps their fixed point exactly, so a
/// step near the stability edge loses nothing but transient accuracy;
/// oscillatory modes need a phase-accurate step.
pub fn max_stiff_step(kind: SpectralKind) -> f64 {
    match kind {
        SpectralKind::Heat => 0.5,
        SpectralKind::Wave | SpectralKind::Schrodinger => 0.1,
    }
}

/// Number of substeps per grid step used for mode `j`.
pub fn substeps(kind: SpectralKind, j: usize, dt: f64) -> usize {
    ((stiffness(kind, eigenvalue(j)) * dt / max_stiff_step(kind)).ceil() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedSolution {
    /// `½<P_j(t0) η_j, η_j>`; exactly zero for modes with `η_j = 0`.
    pub contributions: Vec<f64>,
    /// `P_j(t0)`; `None` for skipped modes.
    pub p0: Vec<Option<Mat>>,
    /// Smallest eigenvalue of `P_j(t)` over the grid; `None` for skipped modes.
    pub min_p_eigenvalue: Vec<Option<f64>>,
    /// Order-independent sum of the contributions.
    pub total: f64,
}

impl TruncatedSolution {
    /// `V_N` from the first `n` modes.
    pub fn partial_value(&self, n: usize) -> f64 {
        canonical_sum(&self.contributions[..n.min(self.contributions.len())])
    }
}

/// Solves every mode with nonzero initial data and sums the values.
/// `eta[j-1]` holds the coefficients of mode `j`.
pub fn solve_truncated(
    model: &SpectralModel,
    grid: &TimeGrid,
    eta: &[Vector],
) -> Result<TruncatedSolution, SpectralError> {
    if eta.len() != model.n_modes() {
        return Err(SpectralError::InvalidInput(format!(
            "{} mode coefficients for {} modes",
            eta.len(),
            model.n_modes()
        )));
    }
    if let Some(bad) = eta.iter().position(|e| e.len() != model.mode_dim()) {
        return Err(SpectralError::InvalidInput(format!(
            "mode {} has {} coefficients, expected {}",
            bad + 1,
            eta[bad].len(),
            model.mode_dim()
        )));
    }
    let per_mode = model
        .blocks
        .par_iter()
        .zip(eta.par_iter())
        .enumerate()
        .map(|(i, (block, e))| {
            if e.iter().all(|v| *v == 0.0) {
                return Ok((0.0, None, None));
            }
            let j = i + 1;
            let fine = grid.refine(substeps(model.kind, j, grid.dt()));
            let wrap = |source| SpectralError::Mode { mode: j, source };
            let sol = solve_bsre_det(&block.coeffs, &fine).map_err(wrap)?;
            let v = feedback_value(&sol, &InitialState::Point(e.clone())).map_err(wrap)?;
            let min_eig = sol.p.iter().map(min_eigenvalue).fold(f64::INFINITY, f64::min);
            Ok((v, Some(sol.p0().clone()), Some(min_eig)))
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>, SpectralError>>()?;
    let mut contributions = Vec::with_capacity(per_mode.len());
    let mut p0 = Vec::with_capacity(per_mode.len());
    let mut min_p_eigenvalue = Vec::with_capacity(per_mode.len());
    for (v, p, m) in per_mode {
        contributions.push(v);
        p0.push(p);
        min_p_eigenvalue.push(m);
    }
    Ok(TruncatedSolution {
        total: canonical_sum(&contributions),
        contributions,
        p0,
        min_p_eigenvalue,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct HsReport {
    /// `Σ_{j<=N} λ_j²` for `N = 1..=n`
    pub weight_partial: Vec<f64>,
    /// `Σ_{j<=N} 1/λ̂_j`
    pub inverse_eigenvalue_partial: Vec<f64>,
    /// `π²/6 - Σ_{j<=n} λ_j²`, known only for the default weights.
    pub weight_tail: Option<f64>,
    pub inverse_eigenvalue_tail: f64,
}

pub const ZETA_2: f64 = PI * PI / 6.0;

pub fn hs_embedding_check(model: &SpectralModel, n: usize) -> Result<HsReport, SpectralError> {
    if n == 0 {
        return Err(SpectralError::BadN(n));
    }
    let weights = (1..=n)
        .map(|j| model.weight(j).ok_or(SpectralError::BadN(n)))
        .collect::<Result<Vec<_>, _>>()?;
    let running = |terms: &mut dyn Iterator<Item = f64>| {
        let mut acc = 0.0;
        terms
            .map(|x| {
                acc += x;
                acc
            })
            .collect::<Vec<f64>>()
    };
    let weight_partial = running(&mut weights.iter().map(|w| w * w));
    let inverse_eigenvalue_partial = running(&mut (1..=n).map(|j| 1.0 / eigenvalue(j)));
    Ok(HsReport {
        weight_tail: model
            .weights
            .is_none()
            .then(|| ZETA_2 - weight_partial[n - 1]),
        inverse_eigenvalue_tail: ZETA_2 - inverse_eigenvalue_partial[n - 1],
        weight_partial,
        inverse_eigenvalue_partial,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub value: f64,
    /// `|V_N - V_prev| / (1 + |V_N|)` against the previous row.
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceStudy {
    pub rows: Vec<ConvergenceRow>,
    /// Per-mode solution at the largest level.
    pub solution: TruncatedSolution,
}

/// `V_N` for each truncation level in `levels`, computed from one solve at
/// the largest level with `eta(j)` as the coefficients of mode `j`.
pub fn galerkin_convergence<F>(
    model: &SpectralModel,
    eta: F,
    levels: &[usize],
    grid: &TimeGrid,
) -> Result<ConvergenceStudy, SpectralError>
where
    F: Fn(usize) -> Vector,
{
    if levels.is_empty() || levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(SpectralError::InvalidInput("levels must be strictly increasing".into()));
    }
    if levels[0] == 0 {
        return Err(SpectralError::BadN(0));
    }
    let top = *levels.last().expect("non-empty");
    if top > model.n_modes() {
        return Err(SpectralError::BadN(top));
    }
    let sub = SpectralModel {
        blocks: model.blocks[..top].to_vec(),
        eigenvalues: model.eigenvalues[..top].to_vec(),
        ..model.clone()
    };
    let etas: Vec<Vector> = (1..=top).map(eta).collect();
    let sol = solve_truncated(&sub, grid, &etas)?;
    let mut rows: Vec<ConvergenceRow> = Vec::with_capacity(levels.len());
    for &n in levels {
        let value = sol.partial_value(n);
        let gap = rows
            .last()
            .map(|prev| (value - prev.value).abs() / (1.0 + value.abs()));
        rows.push(ConvergenceRow { n, value, gap });
    }
    Ok(ConvergenceStudy {
        rows,
        solution: sol,
    })
}

/// Rayleigh quotient `∫(φ')² / ∫φ²` of `φ = sin(jx)` on `(0, π)` by composite
/// Simpson quadrature with `intervals` (even) subintervals.
pub fn dirichlet_rayleigh_quotient(j: usize, intervals: usize) -> f64 {
    let n = intervals + intervals % 2;
    let h = PI / n as f64;
    let jf = j as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for i in 0..=n {
        let x = i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        num += w * (jf * (jf * x).cos()).powi(2);
        den += w * (jf * x).sin().powi(2);
    }
    num / den
}

/// Max over interior quadrature nodes of `|-φ'' - λ̂φ|` for `φ = sin(jx)`, with
/// `φ''` by the fourth-order central difference.
pub fn dirichlet_eigen_residual(j: usize, nodes: usize) -> f64 {
    let h = PI / nodes as f64;
    let jf = j as f64;
    let f = |x: f64| (jf * x).sin();
    (2..nodes - 1)
        .map(|i| {
            let x = i as f64 * h;
            let d2 = (-f(x + 2.0 * h) + 16.0 * f(x + h) - 30.0 * f(x) + 16.0 * f(x - h)
                - f(x - 2.0 * h))
                / (12.0 * h * h);
            (-d2 - eigenvalue(j) * f(x)).abs()
        })
        .fold(0.0, f64::max)
}

/// Eigenvalues `(re, im)` of the unperturbed generator of mode `j`.
pub fn generator_eigenvalues(kind: SpectralKind, j: usize) -> Vec<(f64, f64)> {
    mode_generator(kind, eigenvalue(j))
        .complex_eigenvalues()
        .iter()
        .map(|z| (z.re, z.im))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> TimeGrid {
        TimeGrid::new(0.0, 1.0, 1000).unwrap()
    }

    #[test]
    fn bad_inputs() {
        assert_eq!(
            "plate".parse::<SpectralKind>(),
            Err(SpectralError::BadKind("plate".into()))
        );
        assert_eq!("Wave".parse::<SpectralKind>(), Ok(SpectralKind::Wave));
        assert!(matches!(
            build_model(SpectralKind::Heat, 0, SpectralCoefficients::default()),
            Err(SpectralError::BadN(0))
        ));
    }

    #[test]
    fn first_mode_is_a_dirichlet_eigenfunction() {
        assert!((dirichlet_rayleigh_quotient(1, 2000) - 1.0).abs() < 1e-8);
        assert!((dirichlet_rayleigh_quotient(3, 2000) - 9.0).abs() < 1e-8);
        assert!(dirichlet_eigen_residual(1, 2000) < 1e-8);
    }

    #[test]
    fn wave_generator_spectrum() {
        for j in [1, 2, 5, 16, 32] {
            let mut ev = generator_eigenvalues(SpectralKind::Wave, j);
            ev.sort_by(|a, b| a.1.total_cmp(&b.1));
            let jf = j as f64;
            assert!(ev[0].0.abs() <= 1e-12 && (ev[0].1 + jf).abs() <= 1e-12, "{ev:?}");
            assert!(ev[1].0.abs() <= 1e-12 && (ev[1].1 - jf).abs() <= 1e-12, "{ev:?}");
        }
    }

    #[test]
    fn block_shapes() {
        for (kind, n, m) in [
            (SpectralKind::Heat, 1, 1),
            (SpectralKind::Wave, 2, 1),
            (SpectralKind::Schrodinger, 2, 2),
        ] {
            let model = build_model(kind, 3, SpectralCoefficients::default()).unwrap();
            assert!(model.eigenvalues.windows(2).all(|w| w[1] > w[0]));
            for b in &model.blocks {
                assert_eq!((b.coeffs.n, b.coeffs.m), (n, m));
            }
        }
    }

    #[test]
    fn uncontrolled_heat_decays_like_exponential() {
        let model = build_model(SpectralKind::Heat, 6, SpectralCoefficients::uncontrolled()).unwrap();
        let eta: Vec<Vector> = (0..6).map(|_| Vector::from_element(1, 1.0)).collect();
        let sol = solve_truncated(&model, &grid(), &eta).unwrap();
        for (i, v) in sol.contributions.iter().enumerate() {
            let j = (i + 1) as f64;
            assert!((v - 0.5 * (-2.0 * j * j).exp()).abs() <= 1e-8, "mode {j}: {v}");
        }
        assert!(sol.contributions.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn zero_modes_contribute_nothing_and_truncation_is_bitwise_stable() {
        let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
        let eta = |n: usize| -> Vec<Vector> {
            (1..=n)
                .map(|j| Vector::from_element(1, if j <= 4 { 1.0 / j as f64 } else { 0.0 }))
                .collect()
        };
        let coeffs = SpectralCoefficients::default();
        let base = solve_truncated(&build_model(SpectralKind::Heat, 4, coeffs).unwrap(), &grid, &eta(4))
            .unwrap();
        for n in [5, 8, 13] {
            let sol = solve_truncated(&build_model(SpectralKind::Heat, n, coeffs).unwrap(), &grid, &eta(n))
                .unwrap();
            assert!(sol.contributions[4..].iter().all(|v| *v == 0.0));
            assert_eq!(sol.total.to_bits(), base.total.to_bits());
        }
    }

    #[test]
    fn mode_values_are_psd_for_every_kind() {
        let grid = TimeGrid::new(0.0, 1.0, 200).unwrap();
        for kind in [SpectralKind::Heat, SpectralKind::Wave, SpectralKind::Schrodinger] {
            let model = build_model(kind, 5, SpectralCoefficients::default()).unwrap();
            let eta: Vec<Vector> = (1..=5)
                .map(|j| Vector::from_element(kind.mode_dim(), 1.0 / j as f64))
                .collect();
            let sol = solve_truncated(&model, &grid, &eta).unwrap();
            assert!(sol.min_p_eigenvalue.iter().all(|m| m.unwrap() >= -1e-10), "{kind}");
            assert!(sol.total > 0.0);
        }
    }

    #[test]
    fn hs_partial_sums() {
        let model = build_model(SpectralKind::Heat, 1, SpectralCoefficients::default()).unwrap();
        let one = hs_embedding_check(&model, 1).unwrap();
        assert_eq!(one.weight_partial, vec![1.0]);
        let rep = hs_embedding_check(&model, 1000).unwrap();
        assert!(rep.weight_partial.windows(2).all(|w| w[1] > w[0]));
        assert!(rep.weight_tail.unwrap() > 0.0 && rep.weight_tail.unwrap() <= 1e-3);
        assert_eq!(rep.weight_partial, rep.inverse_eigenvalue_partial);
        assert!(hs_embedding_check(&model, 0).is_err());
        let custom = model.with_weights(vec![0.5, 0.25]).unwrap();
        assert!(hs_embedding_check(&custom, 3).is_err());
        assert_eq!(hs_embedding_check(&custom, 2).unwrap().weight_tail, None);
    }

    #[test]
    fn heat_margins_grow_with_mode() {
        let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let c = SpectralCoefficients::default();
        let model = build_model(SpectralKind::Heat, 8, c).unwrap();
        let margins: Vec<f64> = [1, 2, 4, 8]
            .iter()
            .map(|&j| model.as8_margin(j, &g).unwrap())
            .collect();
        assert!(margins.windows(2).all(|w| w[1] >= w[0]), "{margins:?}");
        assert!(margins[0] >= 0.0);
        assert!(validate_as8(&model.blocks[0], &g).identity_residual <= 1e-10);
        let wave = build_model(SpectralKind::Wave, 1, c).unwrap();
        assert_eq!(wave.as8_margin(1, &g), None);
    }

    #[test]
    fn schrodinger_margin_has_no_mode_dependence() {
        let g = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let c = SpectralCoefficients {
            a1: 0.0,
            a2: -0.5,
            b1: 0.5,
            ..SpectralCoefficients::default()
        };
        let model = build_model(SpectralKind::Schrodinger, 4, c).unwrap();
        // q - r0 - b1² r, minimized at the largest r.
        let expect = c.q - c.r0 - c.b1 * c.b1 * c.r_at(1.0);
        for j in 1..=4 {
            assert!((model.as8_margin(j, &g).unwrap() - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn convergence_tables() {
        let g = TimeGrid::new(0.0, 1.0, 500).unwrap();
        let decay = |j: usize| Vector::from_element(1, (j as f64).powi(-4));
        let free = build_model(SpectralKind::Heat, 32, SpectralCoefficients::uncontrolled()).unwrap();
        let rows = galerkin_convergence(&free, decay, &[16, 32], &g).unwrap().rows;
        assert!(rows[1].gap.unwrap() <= 1e-6);

        let controlled = build_model(SpectralKind::Heat, 32, SpectralCoefficients::default()).unwrap();
        let rows = galerkin_convergence(&controlled, decay, &[4, 8, 16, 32], &g).unwrap().rows;
        let gaps: Vec<f64> = rows.iter().filter_map(|r| r.gap).collect();
        assert!(gaps.windows(2).all(|w| w[1] <= w[0]), "{gaps:?}");

        let finite = |j: usize| Vector::from_element(1, if j <= 3 { 1.0 } else { 0.0 });
        let rows = galerkin_convergence(&controlled, finite, &[4, 8, 16], &g).unwrap().rows;
        assert!(rows.iter().filter_map(|r| r.gap).all(|gap| gap == 0.0));
        assert!(galerkin_convergence(&controlled, finite, &[8, 4], &g).is_err());
    }

    #[test]
    fn stiff_modes_are_substepped() {
        assert_eq!(substeps(SpectralKind::Heat, 1, 1e-3), 1);
        assert!(substeps(SpectralKind::Heat, 32, 1e-3) > 4);
        assert!(substeps(SpectralKind::Schrodinger, 32, 1e-3) > 20);
        // Refinement does not change the answer beyond discretization error.
        let c = SpectralCoefficients::default();
        let model = build_model(SpectralKind::Heat, 12, c).unwrap();
        let eta: Vec<Vector> = (0..12).map(|_| Vector::from_element(1, 1.0)).collect();
        let coarse = solve_truncated(&model, &TimeGrid::new(0.0, 1.0, 100).unwrap(), &eta).unwrap();
        let fine = solve_truncated(&model, &TimeGrid::new(0.0, 1.0, 1000).unwrap(), &eta).unwrap();
        for (a, b) in coarse.contributions.iter().zip(&fine.contributions) {
            assert!((a - b).abs() <= 1e-7 * (1.0 + b.abs()), "{a} {b}");
        }
    }

    #[test]
    fn permuted_and_padded_modes_give_identical_totals() {
        let v = [0.3, 1e-9, 0.7, 0.0, 2.5];
        let mut w = v.to_vec();
        w.reverse();
        w.extend([0.0, 0.0]);
        assert_eq!(canonical_sum(&v).to_bits(), canonical_sum(&w).to_bits());
    }
}
