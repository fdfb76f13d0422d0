use std::borrow::Cow;

use rayon::prelude::*;

use crate::kernels::{
    integrate_ode, mean_and_stderr, path_increments, Direction, IncrementBatch, Mat, TimeGrid,
    Vector, OVERFLOW_GUARD,
};

use super::{CoefficientSet, FrozenCoefficients, InitialState, RiccatiError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostMethod {
    Lyapunov,
    Quadrature,
    MonteCarlo,
}

impl CostMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Lyapunov => "lyapunov",
            Self::Quadrature => "quadrature",
            Self::MonteCarlo => "monte_carlo",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostReport {
    pub value: f64,
    /// Zero for exact oracles.
    pub stderr: f64,
    pub method: CostMethod,
    pub n_paths: Option<usize>,
    pub dt: f64,
}

/// A control law evaluated along a simulated path at node `k`, time `t`,
/// state `x`.
pub trait Policy: Sync {
    fn control(&self, k: usize, t: f64, x: &Vector) -> Vector;
}

impl<F> Policy for F
where
    F: Fn(usize, f64, &Vector) -> Vector + Sync,
{
    fn control(&self, k: usize, t: f64, x: &Vector) -> Vector {
        self(k, t, x)
    }
}

/// `u = Theta_k x` with gains taken at the left grid node.
#[derive(Debug, Clone, Copy)]
pub struct NodeFeedback<'a>(pub &'a [Mat]);

impl Policy for NodeFeedback<'_> {
    fn control(&self, k: usize, _t: f64, x: &Vector) -> Vector {
        &self.0[k] * x
    }
}

/// Deterministic open-loop control `u(t)`.
#[derive(Debug, Clone, Copy)]
pub struct OpenLoop<F>(pub F);

impl<F> Policy for OpenLoop<F>
where
    F: Fn(f64) -> Vector + Sync,
{
    fn control(&self, _k: usize, t: f64, _x: &Vector) -> Vector {
        (self.0)(t)
    }
}

/// Where Monte Carlo routines take their Brownian increments from.
#[derive(Debug, Clone, Copy)]
pub enum Noise<'a> {
    /// Per-path streams keyed by `(seed, path)`.
    Seeded { seed: u64, n_paths: usize },
    /// A precomputed batch, e.g. one coarsened from a finer grid so that
    /// several step sizes see the same Brownian paths.
    Batch(&'a IncrementBatch),
}

impl<'a> Noise<'a> {
    pub fn n_paths(&self) -> usize {
        match self {
            Self::Seeded { n_paths, .. } => *n_paths,
            Self::Batch(b) => b.n_paths(),
        }
    }

    pub(crate) fn check(&self, grid: &TimeGrid, min_paths: usize) -> Result<(), RiccatiError> {
        if self.n_paths() < min_paths {
            return Err(RiccatiError::InvalidInput(format!(
                "need at least {min_paths} paths, got {}",
                self.n_paths()
            )));
        }
        if let Self::Batch(b) = self {
            if b.grid() != grid {
                return Err(RiccatiError::InvalidInput(
                    "increment batch lives on a different grid".into(),
                ));
            }
        }
        Ok(())
    }

    pub(crate) fn increments(&self, grid: &TimeGrid, path: usize) -> Cow<'a, [f64]> {
        match self {
            Self::Seeded { seed, .. } => Cow::Owned(path_increments(grid, *seed, path)),
            Self::Batch(b) => Cow::Borrowed(b.path(path)),
        }
    }
}

/// States and controls of one simulated path, both at every grid node.
pub(super) struct SimPath {
    pub xs: Vec<Vector>,
    pub us: Vec<Vector>,
}

/// Euler–Maruyama for `dx = (A* x + B u) dt + (C x + D u) dW` under `policy`.
pub(super) fn simulate(
    frozen: &[FrozenCoefficients],
    grid: &TimeGrid,
    eta: &Vector,
    policy: &dyn Policy,
    dw: &[f64],
    path: usize,
) -> Result<SimPath, RiccatiError> {
    let dt = grid.dt();
    let mut xs = Vec::with_capacity(grid.nodes());
    let mut us = Vec::with_capacity(grid.nodes());
    let mut x = eta.clone();
    for (k, c) in frozen.iter().enumerate() {
        let u = policy.control(k, grid.time(k), &x);
        if k < grid.steps() {
            let mut next = x.clone();
            next.gemv(dt, &c.a, &x, 1.0);
            next.gemv(dt, &c.b, &u, 1.0);
            next.gemv(dw[k], &c.c, &x, 1.0);
            next.gemv(dw[k], &c.d, &u, 1.0);
            let norm = next.norm();
            if !norm.is_finite() || norm > OVERFLOW_GUARD {
                return Err(RiccatiError::PathNonFinite { path, step: k });
            }
            xs.push(std::mem::replace(&mut x, next));
        } else {
            xs.push(x.clone());
        }
        us.push(u);
    }
    Ok(SimPath { xs, us })
}

/// Runs `f` on every path in parallel and returns results in path order; the
/// reported error is the one of the lowest failing path.
pub(super) fn par_paths<T, F>(n_paths: usize, f: F) -> Result<Vec<T>, RiccatiError>
where
    T: Send,
    F: Fn(usize) -> Result<T, RiccatiError> + Sync + Send,
{
    (0..n_paths)
        .into_par_iter()
        .map(f)
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Trapezoid rule over node values.
pub(super) fn trapezoid(values: impl Iterator<Item = f64>, dt: f64) -> f64 {
    let mut total = 0.0;
    let mut prev: Option<f64> = None;
    for v in values {
        if let Some(p) = prev {
            total += 0.5 * dt * (p + v);
        }
        prev = Some(v);
    }
    total
}

/// Realized cost `½[∫ (x'Qx + u'Ru) dt + x(T)'G x(T)]` of one path.
pub(super) fn path_cost(
    frozen: &[FrozenCoefficients],
    g: &Mat,
    sim: &SimPath,
    dt: f64,
) -> f64 {
    let running = trapezoid(
        frozen
            .iter()
            .zip(sim.xs.iter().zip(&sim.us))
            .map(|(c, (x, u))| quad(&c.q, x) + quad(&c.r, u)),
        dt,
    );
    let xt = sim.xs.last().expect("non-empty path");
    0.5 * (running + quad(g, xt))
}

/// `x' M x` without a temporary.
pub(super) fn quad(m: &Mat, x: &Vector) -> f64 {
    let mut total = 0.0;
    for j in 0..x.len() {
        let col = m.column(j).dot(x);
        total += col * x[j];
    }
    total
}

/// Exact cost of the linear feedback `u = theta(t) x` through the second
/// moment `Σ' = FΣ + ΣF' + NΣN'`, `F = A* + BΘ`, `N = C + DΘ`.
pub fn lyapunov_cost<F>(
    coeffs: &CoefficientSet,
    theta: F,
    init: &InitialState,
    grid: &TimeGrid,
) -> Result<CostReport, RiccatiError>
where
    F: Fn(f64) -> Mat,
{
    if init.dim() != coeffs.n {
        return Err(RiccatiError::InvalidInput(format!(
            "initial state has dimension {}, expected {}",
            init.dim(),
            coeffs.n
        )));
    }
    let field = |t: f64, state: &(Mat, f64)| {
        let c = coeffs.at(t);
        let th = theta(t);
        let f = &c.a + &c.b * &th;
        let nm = &c.c + &c.d * &th;
        let s = &state.0;
        let ds = &f * s + s * f.transpose() + &nm * s * nm.transpose();
        let weight = &c.q + th.transpose() * &c.r * &th;
        (ds, 0.5 * (weight * s).trace())
    };
    let traj = integrate_ode(field, (init.second_moment(), 0.0), grid, Direction::Forward)?;
    let (sigma_t, running) = traj.last().expect("non-empty trajectory");
    Ok(CostReport {
        value: running + 0.5 * (&coeffs.g * sigma_t).trace(),
        stderr: 0.0,
        method: CostMethod::Lyapunov,
        n_paths: None,
        dt: grid.dt(),
    })
}

/// Monte Carlo estimate of the cost of `policy` from `x(t0) = eta`.
pub fn mc_cost<P: Policy>(
    coeffs: &CoefficientSet,
    policy: &P,
    eta: &Vector,
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<CostReport, RiccatiError> {
    mc_cost_with_noise(coeffs, policy, eta, grid, Noise::Seeded { seed, n_paths })
}

pub fn mc_cost_with_noise<P: Policy>(
    coeffs: &CoefficientSet,
    policy: &P,
    eta: &Vector,
    grid: &TimeGrid,
    noise: Noise<'_>,
) -> Result<CostReport, RiccatiError> {
    noise.check(grid, 2)?;
    if eta.len() != coeffs.n {
        return Err(RiccatiError::InvalidInput("initial state dimension".into()));
    }
    let frozen = coeffs.on_grid(grid);
    let dt = grid.dt();
    let costs = par_paths(noise.n_paths(), |p| {
        let dw = noise.increments(grid, p);
        let sim = simulate(&frozen, grid, eta, policy, &dw, p)?;
        Ok(path_cost(&frozen, &coeffs.g, &sim, dt))
    })?;
    let (value, stderr) = mean_and_stderr(&costs);
    Ok(CostReport {
        value,
        stderr,
        method: CostMethod::MonteCarlo,
        n_paths: Some(costs.len()),
        dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::riccati::{feedback_value, random_instance, solve_bsre_det};

    fn scalar(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    #[test]
    fn zero_weights_cost_nothing() {
        let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let coeffs = random_instance(2, 1, 3)
            .with_q(Mat::zeros(2, 2))
            .with_g(Mat::zeros(2, 2));
        let init = InitialState::Point(Vector::from_vec(vec![1.0, -1.0]));
        let rep = lyapunov_cost(&coeffs, |_| Mat::zeros(1, 2), &init, &g).unwrap();
        assert_eq!(rep.value, 0.0);
        assert_eq!(rep.stderr, 0.0);
        assert_eq!(rep.method, CostMethod::Lyapunov);
    }

    #[test]
    fn pure_noise_moment_closed_form() {
        let g = TimeGrid::new(0.0, 1.0, 1000).unwrap();
        let coeffs = CoefficientSet::new(1, 1)
            .with_c(scalar(1.0))
            .with_g(scalar(1.0));
        let init = InitialState::Point(Vector::from_element(1, 1.0));
        let rep = lyapunov_cost(&coeffs, |_| scalar(0.0), &init, &g).unwrap();
        let e = 1f64.exp();
        assert!((rep.value - e / 2.0).abs() < 1e-10);
        let sol = solve_bsre_det(&coeffs, &g).unwrap();
        assert!((feedback_value(&sol, &init).unwrap() - rep.value).abs() < 1e-10);
    }

    #[test]
    fn optimal_feedback_attains_value_and_beats_perturbations() {
        let g = TimeGrid::new(0.0, 1.0, 2000).unwrap();
        let coeffs = random_instance(3, 2, 21);
        let sol = solve_bsre_det(&coeffs, &g).unwrap();
        let init = InitialState::Point(Vector::from_vec(vec![1.0, 0.5, -0.7]));
        let value = feedback_value(&sol, &init).unwrap();
        let opt = lyapunov_cost(&coeffs, |t| sol.theta_at(&coeffs, t), &init, &g).unwrap();
        assert!((opt.value - value).abs() <= 1e-6 * (1.0 + value));
        let mut rng = crate::kernels::path_rng(5, 0);
        for _ in 0..5 {
            let delta = Mat::from_fn(2, 3, |_, _| rand::Rng::random_range(&mut rng, -1.0..1.0));
            let pert = lyapunov_cost(
                &coeffs,
                |t| sol.theta_at(&coeffs, t) + &delta * 0.1,
                &init,
                &g,
            )
            .unwrap();
            assert!(pert.value >= opt.value - 1e-9);
        }
    }

    #[test]
    fn monte_carlo_zero_system() {
        let g = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let coeffs = CoefficientSet::new(2, 1);
        let eta = Vector::from_vec(vec![1.0, 2.0]);
        let rep = mc_cost(&coeffs, &OpenLoop(|_| Vector::zeros(1)), &eta, &g, 50, 1).unwrap();
        assert_eq!(rep.value, 0.0);
        assert_eq!(rep.stderr, 0.0);
    }

    #[test]
    fn monte_carlo_matches_oracle_and_is_deterministic() {
        let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let coeffs = random_instance(3, 2, 8);
        let sol = solve_bsre_det(&coeffs, &g).unwrap();
        let eta = Vector::from_vec(vec![0.5, -1.0, 0.3]);
        let oracle = feedback_value(&sol, &InitialState::Point(eta.clone())).unwrap();
        let policy = NodeFeedback(&sol.theta);
        let a = mc_cost(&coeffs, &policy, &eta, &g, 4000, 17).unwrap();
        let b = mc_cost(&coeffs, &policy, &eta, &g, 4000, 17).unwrap();
        assert_eq!(a, b);
        assert!((a.value - oracle).abs() <= 3.0 * a.stderr + 5.0 * g.dt() * (1.0 + oracle));
    }

    #[test]
    fn too_few_paths_rejected() {
        let g = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let coeffs = CoefficientSet::new(1, 1);
        let eta = Vector::from_element(1, 1.0);
        assert!(mc_cost(&coeffs, &OpenLoop(|_| Vector::zeros(1)), &eta, &g, 1, 1).is_err());
    }

    #[test]
    fn trapezoid_integrates_linear_exactly() {
        let v = (0..=10).map(|k| 2.0 * k as f64 * 0.1);
        assert!((trapezoid(v, 0.1) - 1.0).abs() < 1e-14);
    }
}
