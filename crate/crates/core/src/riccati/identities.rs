use crate::kernels::{
    integrate_ode, mean_and_stderr, Direction, Mat, Vector, OVERFLOW_GUARD,
};

use super::cost::{par_paths, path_cost, simulate, trapezoid, Noise, Policy};
use super::{CoefficientSet, RiccatiError, RiccatiSolution};

/// Grid residuals of the adjoint relation `psi = P x`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjointResidual {
    /// `max_k |psi'(t_k) + A*' psi(t_k) + Q x(t_k)|`
    pub dynamics: f64,
    /// `|psi(T) - G x(T)|`
    pub terminal: f64,
}

impl AdjointResidual {
    pub fn max(&self) -> f64 {
        self.dynamics.max(self.terminal)
    }
}

/// Integrates the closed loop `x' = (A* + B Theta) x` from `eta`, forms
/// `psi = P x` and measures how well `psi' = -A*' psi - Q x`, `psi(T) = G x(T)`
/// hold on the grid of `sol`. `psi'` comes from fourth-order finite
/// differences, so the residual reflects the solver error only.
pub fn adjoint_identity_check(
    sol: &RiccatiSolution,
    coeffs: &CoefficientSet,
    eta: &Vector,
) -> Result<AdjointResidual, RiccatiError> {
    let grid = sol.grid;
    if coeffs.is_stochastic(&grid) {
        return Err(RiccatiError::InvalidInput(
            "the adjoint check needs C = D = 0".into(),
        ));
    }
    if grid.steps() < 4 {
        return Err(RiccatiError::InvalidInput(
            "the adjoint check needs at least 4 steps".into(),
        ));
    }
    let x0 = Mat::from_column_slice(eta.len(), 1, eta.as_slice());
    let xs = integrate_ode(
        |t, x: &Mat| {
            let c = coeffs.at(t);
            (&c.a + &c.b * sol.theta_at(coeffs, t)) * x
        },
        x0,
        &grid,
        Direction::Forward,
    )?;
    let psi: Vec<Mat> = sol.p.iter().zip(&xs).map(|(p, x)| p * x).collect();
    let h = grid.dt();
    let n = grid.steps();
    let d = |k: usize| -> Mat {
        let f = |i: usize| &psi[i];
        let combo = if k == 0 {
            f(0) * -25.0 + f(1) * 48.0 - f(2) * 36.0 + f(3) * 16.0 - f(4) * 3.0
        } else if k == 1 {
            f(0) * -3.0 - f(1) * 10.0 + f(2) * 18.0 - f(3) * 6.0 + f(4)
        } else if k == n - 1 {
            f(n) * 3.0 + f(n - 1) * 10.0 - f(n - 2) * 18.0 + f(n - 3) * 6.0 - f(n - 4)
        } else if k == n {
            f(n) * 25.0 - f(n - 1) * 48.0 + f(n - 2) * 36.0 - f(n - 3) * 16.0 + f(n - 4) * 3.0
        } else {
            f(k - 2) - f(k - 1) * 8.0 + f(k + 1) * 8.0 - f(k + 2)
        };
        combo / (12.0 * h)
    };
    let mut dynamics = 0.0f64;
    for k in 0..=n {
        let c = coeffs.at(grid.time(k));
        let r = d(k) + c.a.transpose() * &psi[k] + &c.q * &xs[k];
        dynamics = dynamics.max(r.norm());
    }
    let terminal = (&psi[n] - &coeffs.g * &xs[n]).norm();
    Ok(AdjointResidual { dynamics, terminal })
}

/// Monte Carlo residual of an identity that holds exactly in expectation.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityCheck {
    pub residual: f64,
    pub stderr: f64,
    /// Reference magnitude of the identity's sides.
    pub value: f64,
    pub n_paths: usize,
    pub dt: f64,
}

impl IdentityCheck {
    /// `|residual| <= 3 stderr + slack`
    pub fn within(&self, slack: f64) -> bool {
        self.residual.abs() <= 3.0 * self.stderr + slack
    }
}

/// `J(u) - ½<P(t0)η, η> - ½ E∫<K(u - Θx), u - Θx> dt` by simulation on the grid
/// of `sol`. The stochastic integral `∫<P x, C x + D u> dW`, which has zero
/// mean, is subtracted pathwise as a control variate; what remains is
/// discretization error plus a small Monte Carlo term.
pub fn completion_of_squares_check<P: Policy>(
    coeffs: &CoefficientSet,
    sol: &RiccatiSolution,
    policy: &P,
    eta: &Vector,
    n_paths: usize,
    seed: u64,
) -> Result<IdentityCheck, RiccatiError> {
    completion_of_squares_check_with_noise(coeffs, sol, policy, eta, Noise::Seeded { seed, n_paths })
}

pub fn completion_of_squares_check_with_noise<P: Policy>(
    coeffs: &CoefficientSet,
    sol: &RiccatiSolution,
    policy: &P,
    eta: &Vector,
    noise: Noise<'_>,
) -> Result<IdentityCheck, RiccatiError> {
    let grid = sol.grid;
    noise.check(&grid, 2)?;
    let frozen = coeffs.on_grid(&grid);
    let dt = grid.dt();
    let value = 0.5 * eta.dot(&(sol.p0() * eta));
    let residuals = par_paths(noise.n_paths(), |p| {
        let dw = noise.increments(&grid, p);
        let sim = simulate(&frozen, &grid, eta, policy, &dw, p)?;
        let j = path_cost(&frozen, &coeffs.g, &sim, dt);
        let gap = trapezoid(
            (0..grid.nodes()).map(|k| {
                let e = &sim.us[k] - &sol.theta[k] * &sim.xs[k];
                e.dot(&(&sol.k[k] * &e))
            }),
            dt,
        );
        let martingale: f64 = (0..grid.steps())
            .map(|k| {
                let (x, u, c) = (&sim.xs[k], &sim.us[k], &frozen[k]);
                (&sol.p[k] * x).dot(&(&c.c * x + &c.d * u)) * dw[k]
            })
            .sum();
        Ok(j - value - 0.5 * gap - martingale)
    })?;
    let (residual, stderr) = mean_and_stderr(&residuals);
    Ok(IdentityCheck {
        residual,
        stderr,
        value,
        n_paths: residuals.len(),
        dt,
    })
}

pub type TestFunction = Box<dyn Fn(f64) -> Vector + Send + Sync>;

/// Initial data and deterministic forcing of the two test equations
/// `dx_i = (A* x_i + u_i) dt + (C x_i + D v_i) dW`, `x_i(t0) = xi_i`.
pub struct TranspositionInputs {
    pub xi1: Vector,
    pub xi2: Vector,
    pub u1: TestFunction,
    pub u2: TestFunction,
    pub v1: TestFunction,
    pub v2: TestFunction,
}

impl TranspositionInputs {
    pub fn zeros(n: usize, m: usize) -> Self {
        Self {
            xi1: Vector::zeros(n),
            xi2: Vector::zeros(n),
            u1: Box::new(move |_| Vector::zeros(n)),
            u2: Box::new(move |_| Vector::zeros(n)),
            v1: Box::new(move |_| Vector::zeros(m)),
            v2: Box::new(move |_| Vector::zeros(m)),
        }
    }
}

impl std::fmt::Debug for TranspositionInputs {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TranspositionInputs")
            .field("xi1", &self.xi1)
            .field("xi2", &self.xi2)
            .finish_non_exhaustive()
    }
}

/// Duality identity between `P` and two test equations driven by the same
/// Brownian motion:
///
/// `E<G x1(T), x2(T)> + E∫<Q x1, x2> - E∫<K^{-1}L x1, L x2>`
/// `= <P(t0) xi1, xi2> + E∫(<P u1, x2> + <P x1, u2> + <P C x1, D v2> + <P D v1, C x2 + D v2>)`.
///
/// Returns the mean of LHS - RHS with the pathwise stochastic integral of
/// `d<P x1, x2>` removed as a control variate.
pub fn transposition_identity_check(
    coeffs: &CoefficientSet,
    sol: &RiccatiSolution,
    inputs: &TranspositionInputs,
    n_paths: usize,
    seed: u64,
) -> Result<IdentityCheck, RiccatiError> {
    transposition_identity_check_with_noise(coeffs, sol, inputs, Noise::Seeded { seed, n_paths })
}

pub fn transposition_identity_check_with_noise(
    coeffs: &CoefficientSet,
    sol: &RiccatiSolution,
    inputs: &TranspositionInputs,
    noise: Noise<'_>,
) -> Result<IdentityCheck, RiccatiError> {
    let grid = sol.grid;
    noise.check(&grid, 2)?;
    let (n, m) = (coeffs.n, coeffs.m);
    if inputs.xi1.len() != n || inputs.xi2.len() != n {
        return Err(RiccatiError::InvalidInput("initial data dimension".into()));
    }
    let frozen = coeffs.on_grid(&grid);
    let dt = grid.dt();
    let eval = |f: &TestFunction, dim: usize| -> Result<Vec<Vector>, RiccatiError> {
        let vals: Vec<Vector> = grid.times().map(f).collect();
        if vals.iter().any(|v| v.len() != dim) {
            return Err(RiccatiError::InvalidInput("test function dimension".into()));
        }
        Ok(vals)
    };
    let u1 = eval(&inputs.u1, n)?;
    let u2 = eval(&inputs.u2, n)?;
    let v1 = eval(&inputs.v1, m)?;
    let v2 = eval(&inputs.v2, m)?;
    let rhs0 = inputs.xi1.dot(&(sol.p0() * &inputs.xi2));

    let samples = par_paths(noise.n_paths(), |p| {
        let dw = noise.increments(&grid, p);
        let mut x1 = inputs.xi1.clone();
        let mut x2 = inputs.xi2.clone();
        let mut lhs_run = Vec::with_capacity(grid.nodes());
        let mut rhs_run = Vec::with_capacity(grid.nodes());
        let mut martingale = 0.0;
        for k in 0..grid.nodes() {
            let c = &frozen[k];
            let pk = &sol.p[k];
            let lx2 = &sol.l[k] * &x2;
            // K^{-1} L = -Theta
            lhs_run.push(x1.dot(&(&c.q * &x2)) + (&sol.theta[k] * &x1).dot(&lx2));
            let n1 = &c.c * &x1 + &c.d * &v1[k];
            let n2 = &c.c * &x2 + &c.d * &v2[k];
            rhs_run.push(
                (pk * &u1[k]).dot(&x2)
                    + (pk * &x1).dot(&u2[k])
                    + (pk * &c.c * &x1).dot(&(&c.d * &v2[k]))
                    + (pk * &c.d * &v1[k]).dot(&n2),
            );
            if k == grid.steps() {
                break;
            }
            martingale += ((pk * &n1).dot(&x2) + (pk * &x1).dot(&n2)) * dw[k];
            let next1 = &x1 + (&c.a * &x1 + &u1[k]) * dt + &n1 * dw[k];
            let next2 = &x2 + (&c.a * &x2 + &u2[k]) * dt + &n2 * dw[k];
            let norm = next1.norm().max(next2.norm());
            if !norm.is_finite() || norm > OVERFLOW_GUARD {
                return Err(RiccatiError::PathNonFinite { path: p, step: k });
            }
            x1 = next1;
            x2 = next2;
        }
        let lhs = x1.dot(&(&coeffs.g * &x2)) + trapezoid(lhs_run.into_iter(), dt);
        let rhs = rhs0 + trapezoid(rhs_run.into_iter(), dt);
        Ok((lhs - rhs - martingale, lhs))
    })?;
    let residuals: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let lhs: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let (residual, stderr) = mean_and_stderr(&residuals);
    Ok(IdentityCheck {
        residual,
        stderr,
        value: mean_and_stderr(&lhs).0,
        n_paths: residuals.len(),
        dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::TimeGrid;
    use crate::riccati::{
        random_instance, random_lq_instance, solve_bsre_det, solve_riccati_det, NodeFeedback,
        OpenLoop,
    };

    fn scalar(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    #[test]
    fn adjoint_vanishes_without_weights() {
        let g = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let coeffs = random_lq_instance(2, 1, 4)
            .with_q(Mat::zeros(2, 2))
            .with_g(Mat::zeros(2, 2));
        let sol = solve_riccati_det(&coeffs, &g).unwrap();
        let res = adjoint_identity_check(&sol, &coeffs, &Vector::from_vec(vec![1.0, 2.0])).unwrap();
        assert_eq!(res.max(), 0.0);
    }

    #[test]
    fn adjoint_tanh_instance() {
        let g = TimeGrid::new(0.0, 1.0, 1000).unwrap();
        let coeffs = CoefficientSet::new(1, 1)
            .with_b(scalar(1.0))
            .with_q(scalar(1.0));
        let sol = solve_riccati_det(&coeffs, &g).unwrap();
        let res = adjoint_identity_check(&sol, &coeffs, &Vector::from_element(1, 1.0)).unwrap();
        assert!(res.max() <= 1e-6, "{res:?}");
    }

    #[test]
    fn adjoint_random_instance_converges() {
        let coeffs = random_lq_instance(3, 2, 9);
        let eta = Vector::from_vec(vec![1.0, -0.5, 0.25]);
        let run = |steps| {
            let g = TimeGrid::new(0.0, 1.0, steps).unwrap();
            let sol = solve_riccati_det(&coeffs, &g).unwrap();
            adjoint_identity_check(&sol, &coeffs, &eta).unwrap().max()
        };
        assert!(run(1000) <= 1e-5);
        // Coarse grids, where truncation error is far above rounding.
        let ratio = run(50) / run(100);
        assert!(ratio >= 8.0, "ratio {ratio}");
    }

    #[test]
    fn completion_with_optimal_feedback_is_cost_discrepancy() {
        let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let coeffs = random_instance(2, 1, 2);
        let sol = solve_bsre_det(&coeffs, &g).unwrap();
        let eta = Vector::from_vec(vec![1.0, 0.5]);
        let chk = completion_of_squares_check(&coeffs, &sol, &NodeFeedback(&sol.theta), &eta, 2000, 4)
            .unwrap();
        assert!(chk.within(5.0 * g.dt() * (1.0 + chk.value)), "{chk:?}");
    }

    #[test]
    fn completion_with_constant_control() {
        let coeffs = random_instance(2, 1, 6);
        let eta = Vector::from_vec(vec![0.3, -0.8]);
        let policy = OpenLoop(|_| Vector::from_element(1, 0.7));
        let run = |steps| {
            let g = TimeGrid::new(0.0, 1.0, steps).unwrap();
            let sol = solve_bsre_det(&coeffs, &g).unwrap();
            completion_of_squares_check(&coeffs, &sol, &policy, &eta, 2000, 9).unwrap()
        };
        let coarse = run(50);
        let fine = run(200);
        for chk in [&coarse, &fine] {
            assert!(chk.within(5.0 * chk.dt * (1.0 + chk.value)), "{chk:?}");
        }
        assert!(fine.residual.abs() < coarse.residual.abs());
    }

    #[test]
    fn completion_zero_system() {
        let g = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let coeffs = CoefficientSet::new(2, 1);
        let sol = solve_bsre_det(&coeffs, &g).unwrap();
        let chk = completion_of_squares_check(
            &coeffs,
            &sol,
            &OpenLoop(|_| Vector::zeros(1)),
            &Vector::from_vec(vec![1.0, 1.0]),
            10,
            0,
        )
        .unwrap();
        assert_eq!(chk.residual, 0.0);
    }

    #[test]
    fn transposition_zero_inputs() {
        let g = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let coeffs = random_instance(2, 1, 1);
        let sol = solve_bsre_det(&coeffs, &g).unwrap();
        let chk = transposition_identity_check(&coeffs, &sol, &TranspositionInputs::zeros(2, 1), 10, 0)
            .unwrap();
        assert_eq!(chk.residual, 0.0);
        assert_eq!(chk.value, 0.0);
    }

    #[test]
    fn transposition_bilinear_moment() {
        let g = TimeGrid::new(0.0, 1.0, 200).unwrap();
        let coeffs = random_instance(2, 1, 12);
        let sol = solve_bsre_det(&coeffs, &g).unwrap();
        let eta = Vector::from_vec(vec![1.0, -1.0]);
        let inputs = TranspositionInputs {
            xi1: eta.clone(),
            xi2: eta,
            ..TranspositionInputs::zeros(2, 1)
        };
        let chk = transposition_identity_check(&coeffs, &sol, &inputs, 4000, 3).unwrap();
        assert!(chk.within(5.0 * g.dt()), "{chk:?}");
    }

    #[test]
    fn transposition_with_forcing() {
        let g = TimeGrid::new(0.0, 1.0, 200).unwrap();
        let coeffs = random_instance(2, 1, 13);
        let sol = solve_bsre_det(&coeffs, &g).unwrap();
        let inputs = TranspositionInputs {
            xi1: Vector::from_vec(vec![0.5, 1.0]),
            xi2: Vector::from_vec(vec![-1.0, 0.2]),
            u1: Box::new(|t| Vector::from_vec(vec![t.sin(), 0.3])),
            u2: Box::new(|t| Vector::from_vec(vec![0.1, t.cos()])),
            v1: Box::new(|t| Vector::from_element(1, 1.0 - t)),
            v2: Box::new(|t| Vector::from_element(1, 0.5 * t)),
        };
        let chk = transposition_identity_check(&coeffs, &sol, &inputs, 4000, 5).unwrap();
        assert!(chk.within(5.0 * g.dt()), "{chk:?}");
    }
}
