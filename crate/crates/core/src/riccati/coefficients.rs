use std::fmt;
use std::sync::Arc;

use crate::kernels::{max_abs, min_eigenvalue, Mat, TimeGrid};

use super::RiccatiError;

type MatFn = Arc<dyn Fn(f64) -> Mat + Send + Sync>;

/// A matrix-valued coefficient of time.
#[derive(Clone)]
pub enum Coefficient {
    Constant(Mat),
    /// Value `values[k]` on `[t_k, t_{k+1})`, the last one also at `t_end`.
    Piecewise { grid: TimeGrid, values: Vec<Mat> },
    Function {
        rows: usize,
        cols: usize,
        f: MatFn,
    },
}

impl fmt::Debug for Coefficient {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(m) => f.debug_tuple("Constant").field(m).finish(),
            Self::Piecewise { grid, values } => f
                .debug_struct("Piecewise")
                .field("grid", grid)
                .field("pieces", &values.len())
                .finish(),
            Self::Function { rows, cols, .. } => f
                .debug_struct("Function")
                .field("rows", rows)
                .field("cols", cols)
                .finish_non_exhaustive(),
        }
    }
}

impl From<Mat> for Coefficient {
    fn from(m: Mat) -> Self {
        Self::Constant(m)
    }
}

impl Coefficient {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::Constant(Mat::zeros(rows, cols))
    }

    pub fn function<F>(rows: usize, cols: usize, f: F) -> Self
    where
        F: Fn(f64) -> Mat + Send + Sync + 'static,
    {
        Self::Function {
            rows,
            cols,
            f: Arc::new(f),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            Self::Constant(m) => m.shape(),
            Self::Piecewise { values, .. } => values.first().map_or((0, 0), |m| m.shape()),
            Self::Function { rows, cols, .. } => (*rows, *cols),
        }
    }

    pub fn at(&self, t: f64) -> Mat {
        match self {
            Self::Constant(m) => m.clone(),
            Self::Piecewise { grid, values } => values[grid.interval(t)].clone(),
            Self::Function { f, .. } => f(t),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, Self::Constant(_))
    }

    /// True when the coefficient vanishes at every node of `grid`.
    pub fn vanishes_on(&self, grid: &TimeGrid) -> bool {
        match self {
            Self::Constant(m) => max_abs(m) == 0.0,
            _ => grid.times().all(|t| max_abs(&self.at(t)) == 0.0),
        }
    }
}

/// Coefficients frozen at one instant. `a` already holds `A + A1`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenCoefficients {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
    pub q: Mat,
    pub r: Mat,
}

/// Coefficients of the controlled system
/// `dx = (A* x + B u) dt + (C x + D u) dW`, `A* = A + A1`, with running cost
/// `x'Qx + u'Ru` and terminal weight `G`.
#[derive(Debug, Clone)]
pub struct CoefficientSet {
    pub n: usize,
    pub m: usize,
    pub a: Coefficient,
    pub a1: Coefficient,
    pub b: Coefficient,
    pub c: Coefficient,
    pub d: Coefficient,
    pub q: Coefficient,
    pub r: Coefficient,
    pub g: Mat,
}

/// Symmetry tolerance for `Q`, `R` and `G`.
const SYM_TOL: f64 = 1e-12;
/// PSD tolerance for `Q` and `G`.
const PSD_TOL: f64 = 1e-12;

impl CoefficientSet {
    /// All coefficients zero except `R = I`.
    pub fn new(n: usize, m: usize) -> Self {
        Self {
            n,
            m,
            a: Coefficient::zeros(n, n),
            a1: Coefficient::zeros(n, n),
            b: Coefficient::zeros(n, m),
            c: Coefficient::zeros(n, n),
            d: Coefficient::zeros(n, m),
            q: Coefficient::zeros(n, n),
            r: Coefficient::Constant(Mat::identity(m, m)),
            g: Mat::zeros(n, n),
        }
    }

    pub fn with_a(mut self, v: impl Into<Coefficient>) -> Self {
        self.a = v.into();
        self
    }

    pub fn with_a1(mut self, v: impl Into<Coefficient>) -> Self {
        self.a1 = v.into();
        self
    }

    pub fn with_b(mut self, v: impl Into<Coefficient>) -> Self {
        self.b = v.into();
        self
    }

    pub fn with_c(mut self, v: impl Into<Coefficient>) -> Self {
        self.c = v.into();
        self
    }

    pub fn with_d(mut self, v: impl Into<Coefficient>) -> Self {
        self.d = v.into();
        self
    }

    pub fn with_q(mut self, v: impl Into<Coefficient>) -> Self {
        self.q = v.into();
        self
    }

    pub fn with_r(mut self, v: impl Into<Coefficient>) -> Self {
        self.r = v.into();
        self
    }

    pub fn with_g(mut self, g: Mat) -> Self {
        self.g = g;
        self
    }

    pub fn at(&self, t: f64) -> FrozenCoefficients {
        FrozenCoefficients {
            a: self.a.at(t) + self.a1.at(t),
            b: self.b.at(t),
            c: self.c.at(t),
            d: self.d.at(t),
            q: self.q.at(t),
            r: self.r.at(t),
        }
    }

    /// Coefficients at every node of `grid`.
    pub fn on_grid(&self, grid: &TimeGrid) -> Vec<FrozenCoefficients> {
        grid.times().map(|t| self.at(t)).collect()
    }

    /// Whether the noise coefficients `C`, `D` are active somewhere on `grid`.
    pub fn is_stochastic(&self, grid: &TimeGrid) -> bool {
        !(self.c.vanishes_on(grid) && self.d.vanishes_on(grid))
    }

    /// Checks shapes, finiteness, symmetry, `Q, G >= 0` and `R >= r_min` at
    /// every node of `grid`.
    pub fn validate(&self, grid: &TimeGrid, r_min: f64) -> Result<(), RiccatiError> {
        let (n, m) = (self.n, self.m);
        let shapes = [
            ("A", self.a.shape(), (n, n)),
            ("A1", self.a1.shape(), (n, n)),
            ("B", self.b.shape(), (n, m)),
            ("C", self.c.shape(), (n, n)),
            ("D", self.d.shape(), (n, m)),
            ("Q", self.q.shape(), (n, n)),
            ("R", self.r.shape(), (m, m)),
            ("G", self.g.shape(), (n, n)),
        ];
        for (name, got, want) in shapes {
            if got != want {
                return Err(RiccatiError::InvalidInput(format!(
                    "{name} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                )));
            }
        }
        check_weight("G", &self.g, PSD_TOL)?;
        for t in grid.times() {
            let c = self.at(t);
            for (name, mat) in [("A", &c.a), ("B", &c.b), ("C", &c.c), ("D", &c.d)] {
                if mat.iter().any(|v| !v.is_finite()) {
                    return Err(RiccatiError::InvalidInput(format!(
                        "{name} is not finite at t = {t}"
                    )));
                }
            }
            check_weight("Q", &c.q, PSD_TOL)?;
            if m > 0 {
                check_symmetric("R", &c.r)?;
                let lo = min_eigenvalue(&c.r);
                if !(lo >= r_min) {
                    return Err(RiccatiError::SingularR {
                        t,
                        min_eigenvalue: lo,
                    });
                }
            }
        }
        Ok(())
    }
}

fn check_symmetric(name: &str, m: &Mat) -> Result<(), RiccatiError> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(RiccatiError::InvalidInput(format!("{name} is not finite")));
    }
    let asym = max_abs(&(m - m.transpose()));
    if asym > SYM_TOL * max_abs(m).max(1.0) {
        return Err(RiccatiError::InvalidInput(format!(
            "{name} is not symmetric (asymmetry {asym:e})"
        )));
    }
    Ok(())
}

fn check_weight(name: &str, m: &Mat, tol: f64) -> Result<(), RiccatiError> {
    check_symmetric(name, m)?;
    if m.nrows() > 0 && min_eigenvalue(m) < -tol * max_abs(m).max(1.0) {
        return Err(RiccatiError::InvalidInput(format!(
            "{name} is not positive semidefinite"
        )));
    }
    Ok(())
}
