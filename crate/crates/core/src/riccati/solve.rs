use crate::kernels::{
    min_eigenvalue, pinv_psd, spd_solve, symmetrize, HermiteTrajectory, Mat, TimeGrid,
    DEFAULT_PINV_TOL, OVERFLOW_GUARD,
};

use super::{CoefficientSet, FrozenCoefficients, InitialState, RiccatiError};

/// Default lower bound on the spectrum of `R`.
pub const R_MIN: f64 = 1e-8;
/// Default lower bound on the spectrum of `K = R + D'PD`.
pub const K_MIN: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiccatiOptions {
    pub r_min: f64,
    pub k_min: f64,
}

impl Default for RiccatiOptions {
    fn default() -> Self {
        Self {
            r_min: R_MIN,
            k_min: K_MIN,
        }
    }
}

/// `P` and the derived feedback data at every grid node. `lambda` is the
/// martingale coefficient of the backward equation, identically zero for
/// deterministic coefficients.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub grid: TimeGrid,
    pub p: Vec<Mat>,
    pub k: Vec<Mat>,
    pub l: Vec<Mat>,
    pub theta: Vec<Mat>,
    pub lambda: Vec<Mat>,
    interp: HermiteTrajectory,
}

impl RiccatiSolution {
    pub fn p0(&self) -> &Mat {
        &self.p[0]
    }

    /// `dP/dt` at the grid nodes, from the equation's right-hand side.
    pub fn p_dot(&self) -> &[Mat] {
        self.interp.slopes()
    }

    /// `P(t)` between nodes by cubic Hermite interpolation.
    pub fn p_at(&self, t: f64) -> Mat {
        self.interp.at(t)
    }

    /// `Theta(t) = -K(t)^{-1} L(t)` built from the interpolated `P(t)`.
    pub fn theta_at(&self, coeffs: &CoefficientSet, t: f64) -> Mat {
        let c = coeffs.at(t);
        let p = self.p_at(t);
        let (k, l) = gain_blocks(&c, &p);
        -solve_gain(&k, &l)
    }
}

fn gain_blocks(c: &FrozenCoefficients, p: &Mat) -> (Mat, Mat) {
    let k = &c.r + c.d.transpose() * p * &c.d;
    let l = c.b.transpose() * p + c.d.transpose() * p * &c.c;
    (symmetrize(&k), l)
}

/// `K^{-1} L`, falling back to the pseudo-inverse if Cholesky fails.
fn solve_gain(k: &Mat, l: &Mat) -> Mat {
    spd_solve(k, l).unwrap_or_else(|| match pinv_psd(k, DEFAULT_PINV_TOL) {
        Ok(pi) => pi.matrix * l,
        Err(_) => Mat::from_element(l.nrows(), l.ncols(), f64::NAN),
    })
}

fn riccati_field(c: &FrozenCoefficients, p: &Mat, t: f64) -> Result<Mat, RiccatiError> {
    let bt_p = c.b.transpose() * p;
    let gain = spd_solve(&c.r, &bt_p).ok_or_else(|| RiccatiError::SingularR {
        t,
        min_eigenvalue: min_eigenvalue(&c.r),
    })?;
    Ok(-(p * &c.a + c.a.transpose() * p + &c.q - bt_p.transpose() * gain))
}

fn bsre_field(c: &FrozenCoefficients, p: &Mat, t: f64) -> Result<Mat, RiccatiError> {
    let (k, l) = gain_blocks(c, p);
    let gain = spd_solve(&k, &l).ok_or_else(|| RiccatiError::SingularK {
        t,
        min_eigenvalue: min_eigenvalue(&k),
    })?;
    Ok(-(p * &c.a + c.a.transpose() * p + c.c.transpose() * p * &c.c + &c.q
        - l.transpose() * gain))
}

/// Backward RK4 from `P(T) = terminal`, symmetrizing after every step.
/// Returns node values and the field evaluated at each node.
fn integrate_backward<F>(
    grid: &TimeGrid,
    terminal: &Mat,
    mut field: F,
) -> Result<(Vec<Mat>, Vec<Mat>), RiccatiError>
where
    F: FnMut(f64, &Mat) -> Result<Mat, RiccatiError>,
{
    let n = grid.steps();
    let h = -grid.dt();
    let mut values = vec![Mat::zeros(0, 0); n + 1];
    values[n] = terminal.clone();
    for (step, k) in (1..=n).rev().enumerate() {
        let t = grid.time(k);
        let y = &values[k];
        let k1 = field(t, y)?;
        let k2 = field(t + 0.5 * h, &(y + &k1 * (0.5 * h)))?;
        let k3 = field(t + 0.5 * h, &(y + &k2 * (0.5 * h)))?;
        let k4 = field(t + h, &(y + &k3 * h))?;
        let next = y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
        let norm = next.norm();
        if !norm.is_finite() || norm > OVERFLOW_GUARD {
            return Err(RiccatiError::NonFinite {
                last_valid_time: t,
                step,
            });
        }
        values[k - 1] = symmetrize(&next);
    }
    let slopes = values
        .iter()
        .enumerate()
        .map(|(k, p)| field(grid.time(k), p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((values, slopes))
}

fn assemble(
    coeffs: &CoefficientSet,
    grid: &TimeGrid,
    values: Vec<Mat>,
    slopes: Vec<Mat>,
    k_min: f64,
) -> Result<RiccatiSolution, RiccatiError> {
    let nodes = grid.nodes();
    let mut ks = Vec::with_capacity(nodes);
    let mut ls = Vec::with_capacity(nodes);
    let mut thetas = Vec::with_capacity(nodes);
    for (i, p) in values.iter().enumerate() {
        let t = grid.time(i);
        let c = coeffs.at(t);
        let (k, l) = gain_blocks(&c, p);
        if coeffs.m > 0 {
            let lo = min_eigenvalue(&k);
            if !(lo >= k_min) {
                return Err(RiccatiError::SingularK {
                    t,
                    min_eigenvalue: lo,
                });
            }
        }
        let gain = spd_solve(&k, &l).ok_or_else(|| RiccatiError::SingularK {
            t,
            min_eigenvalue: min_eigenvalue(&k),
        })?;
        thetas.push(-gain);
        ks.push(k);
        ls.push(l);
    }
    let n = coeffs.n;
    Ok(RiccatiSolution {
        grid: *grid,
        lambda: vec![Mat::zeros(n, n); nodes],
        interp: HermiteTrajectory::new(*grid, values.clone(), slopes)?,
        p: values,
        k: ks,
        l: ls,
        theta: thetas,
    })
}

/// Deterministic LQ Riccati equation `P' = -(PA + A'P + Q - PBR^{-1}B'P)`,
/// `P(T) = G`. Requires `C = D = 0`.
pub fn solve_riccati_det(
    coeffs: &CoefficientSet,
    grid: &TimeGrid,
) -> Result<RiccatiSolution, RiccatiError> {
    solve_riccati_det_with(coeffs, grid, &RiccatiOptions::default())
}

pub fn solve_riccati_det_with(
    coeffs: &CoefficientSet,
    grid: &TimeGrid,
    opts: &RiccatiOptions,
) -> Result<RiccatiSolution, RiccatiError> {
    coeffs.validate(grid, opts.r_min)?;
    if coeffs.is_stochastic(grid) {
        return Err(RiccatiError::InvalidInput(
            "the deterministic Riccati solver needs C = D = 0".into(),
        ));
    }
    let (values, slopes) =
        integrate_backward(grid, &coeffs.g, |t, p| riccati_field(&coeffs.at(t), p, t))?;
    assemble(coeffs, grid, values, slopes, opts.k_min)
}

/// Backward Riccati equation with deterministic coefficients,
/// `P' = -(PA* + A*'P + C'PC + Q - L'K^{-1}L)`, `K = R + D'PD`,
/// `L = B'P + D'PC`, `P(T) = G`; the martingale part vanishes.
pub fn solve_bsre_det(
    coeffs: &CoefficientSet,
    grid: &TimeGrid,
) -> Result<RiccatiSolution, RiccatiError> {
    solve_bsre_det_with(coeffs, grid, &RiccatiOptions::default())
}

pub fn solve_bsre_det_with(
    coeffs: &CoefficientSet,
    grid: &TimeGrid,
    opts: &RiccatiOptions,
) -> Result<RiccatiSolution, RiccatiError> {
    coeffs.validate(grid, opts.r_min)?;
    let (values, slopes) =
        integrate_backward(grid, &coeffs.g, |t, p| bsre_field(&coeffs.at(t), p, t))?;
    assemble(coeffs, grid, values, slopes, opts.k_min)
}

/// `½<P(t0) η, η>`, or `½ tr(P(t0) Σ0)` for random initial data.
pub fn feedback_value(sol: &RiccatiSolution, init: &InitialState) -> Result<f64, RiccatiError> {
    let p0 = sol.p0();
    if init.dim() != p0.nrows() {
        return Err(RiccatiError::InvalidInput(format!(
            "initial state has dimension {}, P has {}",
            init.dim(),
            p0.nrows()
        )));
    }
    Ok(match init {
        InitialState::Point(eta) => 0.5 * eta.dot(&(p0 * eta)),
        InitialState::SecondMoment(s) => 0.5 * (p0 * s).trace(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{max_abs, Vector};
    use crate::riccati::random_instance;

    fn scalar(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    fn tanh_instance() -> CoefficientSet {
        CoefficientSet::new(1, 1)
            .with_b(scalar(1.0))
            .with_q(scalar(1.0))
            .with_r(scalar(1.0))
    }

    #[test]
    fn zero_data_gives_zero_solution() {
        let g = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let coeffs = CoefficientSet::new(2, 1).with_b(Mat::from_element(2, 1, 1.0));
        for sol in [
            solve_riccati_det(&coeffs, &g).unwrap(),
            solve_bsre_det(&coeffs, &g).unwrap(),
        ] {
            assert!(sol.p.iter().chain(&sol.theta).chain(&sol.lambda).all(|m| max_abs(m) == 0.0));
        }
    }

    #[test]
    fn uncontrolled_linear_quadrature() {
        let g = TimeGrid::new(0.0, 2.0, 40).unwrap();
        let q = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let gm = Mat::identity(2, 2) * 0.3;
        let coeffs = CoefficientSet::new(2, 1).with_q(q.clone()).with_g(gm.clone());
        let sol = solve_riccati_det(&coeffs, &g).unwrap();
        for (k, t) in g.times().enumerate() {
            let expect = &gm + &q * (2.0 - t);
            assert!(max_abs(&(&sol.p[k] - expect)) < 1e-12);
        }
    }

    #[test]
    fn tanh_closed_form() {
        let g = TimeGrid::new(0.0, 1.0, 1000).unwrap();
        let sol = solve_riccati_det(&tanh_instance(), &g).unwrap();
        assert_eq!(sol.p[1000][(0, 0)], 0.0);
        for (k, t) in g.times().enumerate() {
            let p = sol.p[k][(0, 0)];
            assert!((p - (1.0 - t).tanh()).abs() < 1e-8);
            assert!((sol.p_dot()[k][(0, 0)] - (p * p - 1.0)).abs() < 1e-14);
            assert!((sol.theta[k][(0, 0)] + p).abs() < 1e-15);
        }
        let v = feedback_value(&sol, &InitialState::Point(Vector::from_element(1, 1.0))).unwrap();
        assert!((v - 0.380797).abs() < 1e-6);
    }

    #[test]
    fn refinement_follows_fourth_order() {
        let coeffs = random_instance(3, 2, 11);
        let p0 = |steps| {
            let g = TimeGrid::new(0.0, 1.0, steps).unwrap();
            solve_bsre_det(&coeffs, &g).unwrap().p[0].clone()
        };
        let fine = p0(640);
        let e1 = max_abs(&(p0(10) - &fine));
        let e2 = max_abs(&(p0(20) - &fine));
        assert!(e1 / e2 >= 10.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn bsre_reduces_to_deterministic_riccati() {
        let g = TimeGrid::new(0.0, 1.0, 200).unwrap();
        for seed in 0..5 {
            let mut coeffs = random_instance(3, 2, seed);
            coeffs.c = Mat::zeros(3, 3).into();
            coeffs.d = Mat::zeros(3, 2).into();
            let a = solve_riccati_det(&coeffs, &g).unwrap();
            let b = solve_bsre_det(&coeffs, &g).unwrap();
            for (pa, pb) in a.p.iter().zip(&b.p) {
                assert!(max_abs(&(pa - pb)) <= 1e-12);
            }
        }
    }

    #[test]
    fn pure_state_noise_grows_exponentially() {
        let gval = 0.7;
        let coeffs = CoefficientSet::new(2, 1)
            .with_c(Mat::identity(2, 2))
            .with_g(Mat::identity(2, 2) * gval);
        let g = TimeGrid::new(0.0, 1.5, 300).unwrap();
        let sol = solve_bsre_det(&coeffs, &g).unwrap();
        for (k, t) in g.times().enumerate() {
            let expect = Mat::identity(2, 2) * (gval * (1.5 - t).exp());
            assert!(max_abs(&(&sol.p[k] - expect)) < 1e-9);
        }
    }

    #[test]
    fn solution_is_symmetric_psd_with_positive_k() {
        let g = TimeGrid::new(0.0, 1.0, 200).unwrap();
        for seed in 0..10 {
            let coeffs = random_instance(3, 2, seed);
            let sol = solve_bsre_det(&coeffs, &g).unwrap();
            assert_eq!(sol.p[200], coeffs.g);
            for (p, k) in sol.p.iter().zip(&sol.k) {
                assert!(max_abs(&(p - p.transpose())) <= 1e-10);
                assert!(min_eigenvalue(p) >= -1e-8);
                assert!(min_eigenvalue(k) > 0.0);
            }
            for ((th, k), l) in sol.theta.iter().zip(&sol.k).zip(&sol.l) {
                assert!(max_abs(&(k * th + l)) < 1e-10);
            }
        }
    }

    #[test]
    fn singular_r_is_rejected() {
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let coeffs = tanh_instance().with_r(scalar(0.0));
        assert!(matches!(
            solve_riccati_det(&coeffs, &g),
            Err(RiccatiError::SingularR { .. })
        ));
    }

    #[test]
    fn riccati_solver_refuses_noise() {
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let coeffs = tanh_instance().with_c(scalar(1.0));
        assert!(matches!(
            solve_riccati_det(&coeffs, &g),
            Err(RiccatiError::InvalidInput(_))
        ));
    }

    #[test]
    fn feedback_value_forms() {
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let coeffs = CoefficientSet::new(2, 1).with_g(Mat::identity(2, 2));
        let sol = solve_bsre_det(&coeffs, &g).unwrap();
        let eta = Vector::from_vec(vec![1.0, 1.0]);
        assert_eq!(feedback_value(&sol, &InitialState::Point(eta.clone())).unwrap(), 1.0);
        let s = InitialState::SecondMoment(&eta * eta.transpose());
        assert_eq!(feedback_value(&sol, &s).unwrap(), 1.0);
        let zero = solve_bsre_det(&CoefficientSet::new(2, 1), &g).unwrap();
        assert_eq!(feedback_value(&zero, &InitialState::Point(eta)).unwrap(), 0.0);
        assert!(feedback_value(&sol, &InitialState::Point(Vector::zeros(3))).is_err());
    }

    #[test]
    fn hermite_interpolation_tracks_closed_form() {
        let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let sol = solve_riccati_det(&tanh_instance(), &g).unwrap();
        for t in [0.003, 0.2571, 0.5, 0.9999] {
            assert!((sol.p_at(t)[(0, 0)] - (1.0 - t).tanh()).abs() < 1e-9);
        }
    }
}
