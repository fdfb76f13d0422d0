use super::{KernelError, Mat, TimeGrid};

/// State norms above this value count as blow-up.
pub const OVERFLOW_GUARD: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Forward,
    /// Integrate from the terminal node toward `t0`.
    Backward,
}

/// Minimal vector-space interface needed by the RK4 stepper.
pub trait OdeState: Clone {
    /// `self + h * k`
    fn axpy(&self, h: f64, k: &Self) -> Self;
    fn norm(&self) -> f64;
}

impl OdeState for f64 {
    fn axpy(&self, h: f64, k: &Self) -> Self {
        self + h * k
    }

    fn norm(&self) -> f64 {
        self.abs()
    }
}

impl OdeState for Mat {
    fn axpy(&self, h: f64, k: &Self) -> Self {
        self + k * h
    }

    fn norm(&self) -> f64 {
        // NaN propagates through the sum and trips the guard.
        self.norm_squared().sqrt()
    }
}

impl<A: OdeState, B: OdeState> OdeState for (A, B) {
    fn axpy(&self, h: f64, k: &Self) -> Self {
        (self.0.axpy(h, &k.0), self.1.axpy(h, &k.1))
    }

    fn norm(&self) -> f64 {
        self.0.norm().hypot(self.1.norm())
    }
}

/// One classical RK4 step of size `h` (negative for backward steps).
pub fn rk4_step<S, F>(field: &mut F, t: f64, y: &S, h: f64) -> S
where
    S: OdeState,
    F: FnMut(f64, &S) -> S,
{
    let k1 = field(t, y);
    let k2 = field(t + 0.5 * h, &y.axpy(0.5 * h, &k1));
    let k3 = field(t + 0.5 * h, &y.axpy(0.5 * h, &k2));
    let k4 = field(t + h, &y.axpy(h, &k3));
    y.axpy(h / 6.0, &k1)
        .axpy(h / 3.0, &k2)
        .axpy(h / 3.0, &k3)
        .axpy(h / 6.0, &k4)
}

/// Fixed-step RK4 over `grid`. The returned trajectory is indexed by grid node;
/// the boundary node (first for forward, last for backward) holds
/// `boundary_value` unchanged.
pub fn integrate_ode<S, F>(
    mut field: F,
    boundary_value: S,
    grid: &TimeGrid,
    direction: Direction,
) -> Result<Vec<S>, KernelError>
where
    S: OdeState,
    F: FnMut(f64, &S) -> S,
{
    let n = grid.nodes();
    let mut out: Vec<Option<S>> = vec![None; n];
    let dt = grid.dt();
    let (start, sign) = match direction {
        Direction::Forward => (0usize, 1.0),
        Direction::Backward => (grid.steps(), -1.0),
    };
    check_finite(&boundary_value, grid.time(start), 0)?;
    let mut y = boundary_value;
    let mut k = start;
    for step in 0..grid.steps() {
        let next = match direction {
            Direction::Forward => k + 1,
            Direction::Backward => k - 1,
        };
        let y_next = rk4_step(&mut field, grid.time(k), &y, sign * dt);
        check_finite(&y_next, grid.time(k), step)?;
        out[k] = Some(std::mem::replace(&mut y, y_next));
        k = next;
    }
    out[k] = Some(y);
    Ok(out.into_iter().map(|s| s.expect("every node visited")).collect())
}

fn check_finite<S: OdeState>(y: &S, last_valid_time: f64, step: usize) -> Result<(), KernelError> {
    let norm = y.norm();
    if norm.is_finite() && norm <= OVERFLOW_GUARD {
        Ok(())
    } else {
        Err(KernelError::NonFinite {
            last_valid_time,
            step,
        })
    }
}

/// Piecewise cubic Hermite interpolant of a matrix trajectory known at grid
/// nodes together with its exact time derivative there. Fourth-order accurate,
/// which keeps RK4 stage evaluations of dependent equations at full order.
#[derive(Debug, Clone)]
pub struct HermiteTrajectory {
    grid: TimeGrid,
    values: Vec<Mat>,
    slopes: Vec<Mat>,
}

impl HermiteTrajectory {
    pub fn new(grid: TimeGrid, values: Vec<Mat>, slopes: Vec<Mat>) -> Result<Self, KernelError> {
        if values.len() != grid.nodes() || slopes.len() != grid.nodes() {
            return Err(KernelError::Dimension(format!(
                "expected {} nodes, got {} values and {} slopes",
                grid.nodes(),
                values.len(),
                slopes.len()
            )));
        }
        Ok(Self {
            grid,
            values,
            slopes,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Mat] {
        &self.values
    }

    pub fn slopes(&self) -> &[Mat] {
        &self.slopes
    }

    pub fn at(&self, t: f64) -> Mat {
        let k = self.grid.interval(t);
        let h = self.grid.dt();
        let s = ((t - self.grid.time(k)) / h).clamp(0.0, 1.0);
        if s == 0.0 {
            return self.values[k].clone();
        }
        if s == 1.0 {
            return self.values[k + 1].clone();
        }
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        &self.values[k] * h00
            + &self.slopes[k] * (h10 * h)
            + &self.values[k + 1] * h01
            + &self.slopes[k + 1] * (h11 * h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_keeps_boundary_value() {
        let g = TimeGrid::new(0.0, 2.0, 10).unwrap();
        let m = Mat::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        for dir in [Direction::Forward, Direction::Backward] {
            let traj = integrate_ode(|_, y: &Mat| y * 0.0, m.clone(), &g, dir).unwrap();
            assert!(traj.iter().all(|y| *y == m));
        }
    }

    #[test]
    fn exponential_decay_is_fourth_order() {
        let err = |steps: usize| {
            let g = TimeGrid::new(0.0, 1.0, steps).unwrap();
            let traj = integrate_ode(|_, y: &f64| -y, 1.0, &g, Direction::Forward).unwrap();
            (traj[steps] - (-1.0f64).exp()).abs()
        };
        assert!(err(1000) < 1e-8);
        // Compare at coarse steps where truncation dominates rounding.
        let ratio = err(20) / err(40);
        assert!(ratio >= 10.0, "ratio {ratio}");
    }

    #[test]
    fn backward_boundary_is_exact() {
        let g = TimeGrid::new(0.0, 1.0, 13).unwrap();
        let traj = integrate_ode(|_, y: &f64| -y, 0.3, &g, Direction::Backward).unwrap();
        assert_eq!(traj[13], 0.3);
        assert!((traj[0] - 0.3 * 1f64.exp()).abs() < 1e-6);
    }

    #[test]
    fn blow_up_is_flagged_near_singularity() {
        // y' = y^2, y(0) = 2 explodes at t = 1/2.
        let g = TimeGrid::new(0.0, 1.0, 100_000).unwrap();
        let err = integrate_ode(|_, y: &f64| y * y, 2.0, &g, Direction::Forward).unwrap_err();
        match err {
            KernelError::NonFinite {
                last_valid_time, ..
            } => assert!((last_valid_time - 0.5).abs() < 1e-3, "{last_valid_time}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn hermite_reproduces_cubics() {
        let g = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let f = |t: f64| Mat::from_element(1, 1, t * t * t - t);
        let df = |t: f64| Mat::from_element(1, 1, 3.0 * t * t - 1.0);
        let h = HermiteTrajectory::new(
            g,
            g.times().map(f).collect(),
            g.times().map(df).collect(),
        )
        .unwrap();
        for t in [0.0, 0.1, 0.37, 0.5, 0.99, 1.0] {
            assert!((h.at(t)[(0, 0)] - f(t)[(0, 0)]).abs() < 1e-14);
        }
    }
}
