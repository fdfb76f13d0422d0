//! A scalar backward stochastic Riccati equation whose solution is bounded
//! while its feedback gain `Θ = -Y^{-1} Z` is not.
//!
//! With `M(t) = ∫_0^t (T-s)^{-1/2} dW`, `τ` the first time `|M| > 1`,
//! `ζ = c' (T-t)^{-1/2}` on `[0, τ]` and `Y = c + ∫ζ dW`, the pair
//! `P = Y^{-1} - R`, `Λ = -Y^{-2} ζ` solves
//! `dP = (R + P)^{-1} Λ² dt + Λ dW` with `R = 1/4`. The time axis is cut at
//! `T - ε` to keep the integrand finite.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::kernels::{mean_and_stderr, path_rng, TimeGrid};

/// `c' = π / (2√2)`, the bound on `|∫ζ dW|`.
pub const ZETA_SCALE: f64 = PI * FRAC_1_SQRT_2 / 2.0;
/// `c = c' + 1`
pub const SHIFT: f64 = ZETA_SCALE + 1.0;
pub const R_WEIGHT: f64 = 0.25;
/// Upper end `π/√2 + 1` of the range of `Y`.
pub const Y_MAX: f64 = 2.0 * ZETA_SCALE + 1.0;
pub const Y_MIN: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CounterexampleError {
    #[error("bad cutoff: {0}")]
    BadCutoff(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleConfig {
    pub t_end: f64,
    pub dt: f64,
    pub eps: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Replace every Brownian increment by zero.
    pub zero_noise: bool,
    /// Force `ζ ≡ 0`.
    pub disable_zeta: bool,
    /// Cutoffs `ε_i >= eps` at which `∫|Θ|² dt` is recorded per path.
    pub checkpoints: Vec<f64>,
}

impl CounterexampleConfig {
    /// Checkpoints at the decades `10^{-k} >= eps` below `T/10`, plus `eps`.
    pub fn new(t_end: f64, dt: f64, eps: f64, n_paths: usize, seed: u64) -> Self {
        let mut checkpoints: Vec<f64> = (1..)
            .map(|k| 10f64.powi(-k))
            .take_while(|&e| e > eps * (1.0 + 1e-12))
            .filter(|&e| e < t_end / 10.0 * (1.0 + 1e-12))
            .collect();
        checkpoints.push(eps);
        Self {
            t_end,
            dt,
            eps,
            n_paths,
            seed,
            zero_noise: false,
            disable_zeta: false,
            checkpoints,
        }
    }

    fn validate(&self) -> Result<TimeGrid, CounterexampleError> {
        let (t, e) = (self.t_end, self.eps);
        if !(t > 0.0 && t.is_finite()) {
            return Err(CounterexampleError::InvalidInput(format!("horizon T = {t}")));
        }
        if !(e > 0.0 && e < t / 10.0) {
            return Err(CounterexampleError::BadCutoff(format!(
                "need 0 < eps < T/10, got eps = {e}, T = {t}"
            )));
        }
        if !(self.dt > 0.0 && self.dt <= e / 10.0 * (1.0 + 1e-12)) {
            return Err(CounterexampleError::BadCutoff(format!(
                "need 0 < dt <= eps/10, got dt = {}, eps = {e}",
                self.dt
            )));
        }
        if self.n_paths == 0 {
            return Err(CounterexampleError::InvalidInput("n_paths must be at least 1".into()));
        }
        if let Some(c) = self.checkpoints.iter().find(|&&c| !(c >= e && c < t)) {
            return Err(CounterexampleError::BadCutoff(format!(
                "checkpoint {c} outside [eps, T)"
            )));
        }
        TimeGrid::with_step(0.0, t - e, self.dt)
            .map_err(|err| CounterexampleError::InvalidInput(err.to_string()))
    }
}

/// Per-path summary. Paths are frozen after the stopping index: `ζ`, `Z`,
/// `Λ` and `Θ` vanish there and `I`, `Y`, `P` are constant.
#[derive(Debug, Clone, PartialEq)]
pub struct PathSummary {
    /// Grid index of `τ`.
    pub tau_index: usize,
    /// `|M|` exceeded 1 before the cutoff.
    pub crossed: bool,
    pub max_abs_i: f64,
    pub min_y: f64,
    pub max_y: f64,
    pub min_p: f64,
    pub max_p: f64,
    /// `3 ζ(τ-) √dt`, with `ζ(τ-) = c' (T - τ)^{-1/2}`.
    pub tol_disc: f64,
    /// Sum over all steps of the one-step Riccati residual.
    pub residual_sum: f64,
    /// `∫|Θ|² dt` up to each checkpoint.
    pub theta_sq: Vec<f64>,
}

impl PathSummary {
    pub fn i_ok(&self) -> bool {
        self.max_abs_i <= ZETA_SCALE + self.tol_disc
    }

    pub fn y_ok(&self) -> bool {
        self.min_y >= Y_MIN - self.tol_disc && self.max_y <= Y_MAX + self.tol_disc
    }

    /// `P` lies in the image of the `Y` range under `y ↦ 1/y - R`, widened by
    /// the first-order effect of the overshoot allowance.
    pub fn p_ok(&self) -> bool {
        let tol = self.tol_disc;
        self.min_p >= 1.0 / (Y_MAX + tol) - R_WEIGHT && self.max_p <= 1.0 / (Y_MIN - tol).max(0.0) - R_WEIGHT
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundDiagnostics {
    pub n_paths: usize,
    pub crossed: usize,
    pub i_violations: usize,
    pub y_violations: usize,
    pub p_violations: usize,
    /// Largest `(max|I| - c') / tol_disc` over paths.
    pub worst_overshoot_ratio: f64,
}

impl BoundDiagnostics {
    pub fn i_fraction_ok(&self) -> f64 {
        1.0 - self.i_violations as f64 / self.n_paths as f64
    }

    pub fn y_fraction_ok(&self) -> f64 {
        1.0 - self.y_violations as f64 / self.n_paths as f64
    }

    pub fn all_ok(&self) -> bool {
        self.i_violations == 0 && self.y_violations == 0 && self.p_violations == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CounterexampleBatch {
    pub config: CounterexampleConfig,
    pub grid: TimeGrid,
    pub paths: Vec<PathSummary>,
    pub bounds: BoundDiagnostics,
}

impl CounterexampleBatch {
    pub fn tau(&self, path: usize) -> f64 {
        self.grid.time(self.paths[path].tau_index)
    }
}

/// Full trajectory of one path, node-indexed on the batch grid.
#[derive(Debug, Clone, PartialEq)]
pub struct CounterexamplePath {
    pub times: Vec<f64>,
    pub m: Vec<f64>,
    pub zeta: Vec<f64>,
    pub i: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub p: Vec<f64>,
    pub lambda: Vec<f64>,
    pub theta: Vec<f64>,
    pub tau_index: usize,
}

pub fn simulate_paths(
    t_end: f64,
    dt: f64,
    eps: f64,
    n_paths: usize,
    seed: u64,
) -> Result<CounterexampleBatch, CounterexampleError> {
    simulate_with(&CounterexampleConfig::new(t_end, dt, eps, n_paths, seed))
}

pub fn simulate_with(config: &CounterexampleConfig) -> Result<CounterexampleBatch, CounterexampleError> {
    let grid = config.validate()?;
    let kernel = Kernel::new(config, &grid);
    let paths: Vec<PathSummary> = (0..config.n_paths)
        .into_par_iter()
        .map(|p| kernel.run(p, None))
        .collect();
    let mut bounds = BoundDiagnostics {
        n_paths: paths.len(),
        crossed: 0,
        i_violations: 0,
        y_violations: 0,
        p_violations: 0,
        worst_overshoot_ratio: f64::NEG_INFINITY,
    };
    for s in &paths {
        bounds.crossed += usize::from(s.crossed);
        bounds.i_violations += usize::from(!s.i_ok());
        bounds.y_violations += usize::from(!s.y_ok());
        bounds.p_violations += usize::from(!s.p_ok());
        if s.tol_disc > 0.0 {
            bounds.worst_overshoot_ratio = bounds
                .worst_overshoot_ratio
                .max((s.max_abs_i - ZETA_SCALE) / s.tol_disc);
        }
    }
    Ok(CounterexampleBatch {
        config: config.clone(),
        grid,
        paths,
        bounds,
    })
}

/// Re-simulates one path of the batch described by `config` and keeps every
/// node.
pub fn trace_path(
    config: &CounterexampleConfig,
    path: usize,
) -> Result<CounterexamplePath, CounterexampleError> {
    let grid = config.validate()?;
    if path >= config.n_paths {
        return Err(CounterexampleError::InvalidInput(format!(
            "path {path} out of {}",
            config.n_paths
        )));
    }
    let kernel = Kernel::new(config, &grid);
    let mut trace = CounterexamplePath {
        times: grid.times().collect(),
        m: Vec::with_capacity(grid.nodes()),
        zeta: Vec::new(),
        i: Vec::new(),
        y: Vec::new(),
        z: Vec::new(),
        p: Vec::new(),
        lambda: Vec::new(),
        theta: Vec::new(),
        tau_index: 0,
    };
    let summary = kernel.run(path, Some(&mut trace));
    trace.tau_index = summary.tau_index;
    Ok(trace)
}

struct Kernel<'a> {
    config: &'a CounterexampleConfig,
    grid: TimeGrid,
    /// `(T - t_k)^{-1/2}` per node.
    inv_sqrt: Vec<f64>,
    /// Grid index of each checkpoint.
    checkpoint_nodes: Vec<usize>,
}

impl<'a> Kernel<'a> {
    fn new(config: &'a CounterexampleConfig, grid: &TimeGrid) -> Self {
        let inv_sqrt = grid.times().map(|t| (config.t_end - t).sqrt().recip()).collect();
        let checkpoint_nodes = config
            .checkpoints
            .iter()
            .map(|e| (((config.t_end - e) / grid.dt()).round() as usize).min(grid.steps()))
            .collect();
        Self {
            config,
            grid: *grid,
            inv_sqrt,
            checkpoint_nodes,
        }
    }

    fn run(&self, path: usize, mut trace: Option<&mut CounterexamplePath>) -> PathSummary {
        let steps = self.grid.steps();
        let dt = self.grid.dt();
        let sd = dt.sqrt();
        let zeta_on = !self.config.disable_zeta;
        let mut rng = path_rng(self.config.seed, path);
        let (mut m, mut i) = (0.0f64, 0.0f64);
        let mut y = SHIFT;
        let mut theta_int = 0.0;
        let mut theta_sq = vec![0.0; self.checkpoint_nodes.len()];
        let mut summary = PathSummary {
            tau_index: steps,
            crossed: false,
            max_abs_i: 0.0,
            min_y: y,
            max_y: y,
            min_p: 1.0 / y - R_WEIGHT,
            max_p: 1.0 / y - R_WEIGHT,
            tol_disc: 3.0 * ZETA_SCALE * self.inv_sqrt[steps] * sd,
            residual_sum: 0.0,
            theta_sq: Vec::new(),
        };
        let mut k = 0;
        while k < steps {
            let zeta = if zeta_on { ZETA_SCALE * self.inv_sqrt[k] } else { 0.0 };
            let dw = if self.config.zero_noise {
                0.0
            } else {
                sd * rng.sample::<f64, _>(StandardNormal)
            };
            let (p, lambda) = (1.0 / y - R_WEIGHT, -zeta / (y * y));
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(m, zeta, i, y, p, lambda);
            }
            theta_int += (zeta / y).powi(2) * dt;
            let y_next = y + zeta * dw;
            let p_next = 1.0 / y_next - R_WEIGHT;
            summary.residual_sum += (p_next - p) - (zeta * zeta / (y * y * y) * dt + lambda * dw);
            m += self.inv_sqrt[k] * dw;
            i += zeta * dw;
            y = y_next;
            k += 1;
            for (slot, &node) in theta_sq.iter_mut().zip(&self.checkpoint_nodes) {
                if node == k {
                    *slot = theta_int;
                }
            }
            summary.max_abs_i = summary.max_abs_i.max(i.abs());
            summary.min_y = summary.min_y.min(y);
            summary.max_y = summary.max_y.max(y);
            summary.min_p = summary.min_p.min(p_next);
            summary.max_p = summary.max_p.max(p_next);
            if m.abs() > 1.0 {
                summary.crossed = true;
                summary.tau_index = k;
                summary.tol_disc = 3.0 * ZETA_SCALE * self.inv_sqrt[k] * sd;
                break;
            }
        }
        // Frozen after τ: the running Θ integral stops growing.
        for (slot, &node) in theta_sq.iter_mut().zip(&self.checkpoint_nodes) {
            if node > k {
                *slot = theta_int;
            }
        }
        if let Some(tr) = trace {
            let p = 1.0 / y - R_WEIGHT;
            while tr.m.len() < self.grid.nodes() {
                tr.push(m, 0.0, i, y, p, 0.0);
            }
        }
        summary.theta_sq = theta_sq;
        summary
    }
}

impl CounterexamplePath {
    fn push(&mut self, m: f64, zeta: f64, i: f64, y: f64, p: f64, lambda: f64) {
        self.m.push(m);
        self.zeta.push(zeta);
        self.i.push(i);
        self.y.push(y);
        self.z.push(zeta);
        self.p.push(p);
        self.lambda.push(lambda);
        self.theta.push(-zeta / y);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualCheck {
    /// Mean over paths of the per-path time-average residual.
    pub mean: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub dt: f64,
}

impl ResidualCheck {
    pub fn within(&self, k: f64) -> bool {
        self.mean.abs() <= k * self.stderr
    }
}

/// Mean of the one-step residual `ΔP - [(R+P)^{-1} Λ² Δt + Λ ΔW]` over all
/// steps and paths, with the standard error taken across paths.
pub fn bsre_residual_check(batch: &CounterexampleBatch) -> ResidualCheck {
    let steps = batch.grid.steps() as f64;
    let per_path: Vec<f64> = batch.paths.iter().map(|s| s.residual_sum / steps).collect();
    let (mean, stderr) = mean_and_stderr(&per_path);
    ResidualCheck {
        mean,
        stderr,
        n_paths: per_path.len(),
        dt: batch.grid.dt(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonRow {
    pub eps: f64,
    /// Sample mean of `exp(∫_0^{T-ε} |ζ|² dt)`.
    pub exp_mean: f64,
    pub exp_stderr: f64,
    /// 0.5, 0.9 and 0.99 quantiles of `∫|Θ|² dt`, when `ε` is a checkpoint.
    pub theta_quantiles: Option<[f64; 3]>,
}

/// Heavy-tail diagnostics per cutoff. `∫|ζ|²` is taken in closed form,
/// `c'² ln(T / (T - τ ∧ (T - ε)))`, from the simulated stopping times.
pub fn unboundedness_statistic(
    batch: &CounterexampleBatch,
    eps_list: &[f64],
) -> Result<Vec<HorizonRow>, CounterexampleError> {
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(CounterexampleError::BadCutoff("cutoffs must be strictly decreasing".into()));
    }
    let cfg = &batch.config;
    if let Some(e) = eps_list
        .iter()
        .find(|&&e| !(e >= cfg.eps * (1.0 - 1e-12) && e < cfg.t_end))
    {
        return Err(CounterexampleError::BadCutoff(format!(
            "cutoff {e} below the simulated cutoff {}",
            cfg.eps
        )));
    }
    let t = cfg.t_end;
    Ok(eps_list
        .iter()
        .map(|&e| {
            let exps: Vec<f64> = (0..batch.paths.len())
                .map(|p| {
                    if cfg.disable_zeta {
                        return 1.0;
                    }
                    let stop = batch.tau(p).min(t - e);
                    (t / (t - stop)).powf(ZETA_SCALE * ZETA_SCALE)
                })
                .collect();
            let (exp_mean, exp_stderr) = mean_and_stderr(&exps);
            let theta_quantiles = cfg
                .checkpoints
                .iter()
                .position(|&c| (c - e).abs() <= 1e-12 * e.max(1.0))
                .map(|slot| {
                    let mut v: Vec<f64> = batch.paths.iter().map(|s| s.theta_sq[slot]).collect();
                    v.sort_by(f64::total_cmp);
                    [quantile(&v, 0.5), quantile(&v, 0.9), quantile(&v, 0.99)]
                });
            HorizonRow {
                eps: e,
                exp_mean,
                exp_stderr,
                theta_quantiles,
            }
        })
        .collect())
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants() {
        assert!((ZETA_SCALE - 1.110721).abs() < 1e-6);
        assert!((Y_MAX - 3.221441).abs() < 1e-6);
        assert!((SHIFT - 2.110721).abs() < 1e-6);
    }

    #[test]
    fn cutoff_validation() {
        assert!(matches!(
            simulate_paths(1.0, 1e-3, 0.2, 10, 0),
            Err(CounterexampleError::BadCutoff(_))
        ));
        assert!(matches!(
            simulate_paths(1.0, 1e-2, 1e-2, 10, 0),
            Err(CounterexampleError::BadCutoff(_))
        ));
        assert!(simulate_paths(1.0, 1e-3, 1e-2, 10, 0).is_ok());
    }

    #[test]
    fn zero_noise_path_is_frozen() {
        let mut cfg = CounterexampleConfig::new(1.0, 1e-3, 1e-2, 3, 0);
        cfg.zero_noise = true;
        let batch = simulate_with(&cfg).unwrap();
        for s in &batch.paths {
            assert!(!s.crossed);
            assert_eq!(s.tau_index, batch.grid.steps());
            assert_eq!(s.max_abs_i, 0.0);
            assert_eq!((s.min_y, s.max_y), (SHIFT, SHIFT));
        }
        let tr = trace_path(&cfg, 1).unwrap();
        assert!(tr.m.iter().all(|m| *m == 0.0));
        assert!(tr.y.iter().all(|y| *y == SHIFT));
        assert_eq!(tr.m.len(), batch.grid.nodes());
    }

    #[test]
    fn disabled_zeta_has_zero_residual_and_unit_statistic() {
        let mut cfg = CounterexampleConfig::new(1.0, 1e-3, 1e-2, 50, 4);
        cfg.disable_zeta = true;
        let batch = simulate_with(&cfg).unwrap();
        assert!(batch.paths.iter().all(|s| s.residual_sum == 0.0 && s.max_abs_i == 0.0));
        let res = bsre_residual_check(&batch);
        assert_eq!((res.mean, res.stderr), (0.0, 0.0));
        for row in unboundedness_statistic(&batch, &[1e-1, 1e-2]).unwrap() {
            assert_eq!(row.exp_mean, 1.0);
        }
    }

    #[test]
    fn terminal_p_matches_y() {
        let cfg = CounterexampleConfig::new(1.0, 1e-3, 1e-2, 8, 11);
        for p in 0..8 {
            let tr = trace_path(&cfg, p).unwrap();
            let last = tr.m.len() - 1;
            assert_eq!(tr.p[last] + R_WEIGHT, 1.0 / tr.y[last]);
            // I = c' M up to the stopping index.
            let k = tr.tau_index.min(last);
            assert!((tr.i[k] - ZETA_SCALE * tr.m[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn trace_agrees_with_summary() {
        let cfg = CounterexampleConfig::new(1.0, 1e-3, 1e-2, 20, 5);
        let batch = simulate_with(&cfg).unwrap();
        for p in [0, 7, 19] {
            let tr = trace_path(&cfg, p).unwrap();
            assert_eq!(tr.tau_index, batch.paths[p].tau_index);
            let max_i = tr.i.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            assert_eq!(max_i, batch.paths[p].max_abs_i);
            assert!(tr.theta[tr.tau_index..].iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn batches_are_reproducible() {
        let a = simulate_paths(1.0, 1e-3, 1e-2, 200, 9).unwrap();
        let b = simulate_paths(1.0, 1e-3, 1e-2, 200, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn residual_is_centered() {
        let batch = simulate_paths(1.0, 1e-4, 1e-2, 10_000, 2).unwrap();
        let res = bsre_residual_check(&batch);
        assert!(res.within(3.0), "{res:?}");
    }

    #[test]
    fn residual_bias_shrinks_with_dt() {
        let coarse = bsre_residual_check(&simulate_paths(1.0, 1e-3, 1e-2, 4000, 2).unwrap());
        let fine = bsre_residual_check(&simulate_paths(1.0, 5e-4, 1e-2, 4000, 2).unwrap());
        assert!(fine.mean.abs() < coarse.mean.abs(), "{coarse:?} {fine:?}");
    }

    #[test]
    fn statistic_grows_as_cutoff_shrinks() {
        let batch = simulate_paths(1.0, 1e-4, 1e-3, 3000, 1).unwrap();
        let rows = unboundedness_statistic(&batch, &[1e-1, 1e-2, 1e-3]).unwrap();
        assert!(rows.windows(2).all(|w| w[1].exp_mean > w[0].exp_mean), "{rows:?}");
        for row in &rows {
            let q = row.theta_quantiles.unwrap();
            assert!(q[0] <= q[1] && q[1] <= q[2]);
        }
        for s in &batch.paths {
            assert!(s.theta_sq.windows(2).all(|w| w[1] >= w[0]));
        }
        assert!(unboundedness_statistic(&batch, &[1e-2, 1e-1]).is_err());
        assert!(unboundedness_statistic(&batch, &[1e-4]).is_err());
    }

    #[test]
    fn bounds_hold_on_a_moderate_batch() {
        let batch = simulate_paths(1.0, 1e-4, 1e-2, 2000, 3).unwrap();
        let b = batch.bounds;
        assert!(b.crossed > 0);
        assert!(b.i_fraction_ok() >= 0.99, "{b:?}");
    }
}
