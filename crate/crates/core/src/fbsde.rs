//! Forward flow `X`, its pathwise inverse `X̃`, and the reconstruction of the
//! Riccati solution as `P = Y X̃'` with `Y = P X`, `Z = P (C + DΘ) X`.

use rayon::prelude::*;

use crate::kernels::{Mat, TimeGrid, OVERFLOW_GUARD};
use crate::riccati::{CoefficientSet, Noise, RiccatiError, RiccatiSolution};

/// Matrices of one simulated path at every node.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstructionPath {
    pub x: Vec<Mat>,
    pub x_tilde: Vec<Mat>,
    pub y: Vec<Mat>,
    pub z: Vec<Mat>,
}

/// Path-mean Frobenius diagnostics per grid node.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstructionDiagnostics {
    pub dt: f64,
    pub times: Vec<f64>,
    /// `E|X X̃' - I|`
    pub err_inverse: Vec<f64>,
    /// `E|Y X̃' - P|`
    pub err_p: Vec<f64>,
    /// `E|Z X̃' - Y X̃' (C + DΘ)|`
    pub err_lambda: Vec<f64>,
    /// `E|ΔY + (A*'Y + C'Z + QX) Δt - Z ΔW|` of the step ending at each node
    /// (zero at the first node).
    pub bsde_residual: Vec<f64>,
    /// `E max_t |X X̃' - I|`
    pub mean_path_max_inverse: f64,
    /// `max_paths |Y(T) - G X(T)|`
    pub terminal_mismatch: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstructionState {
    pub grid: TimeGrid,
    pub n_paths: usize,
    pub diagnostics: ConstructionDiagnostics,
    /// Full matrices per path, kept only on request.
    pub paths: Option<Vec<ConstructionPath>>,
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

impl ConstructionState {
    pub fn max_err_inverse(&self) -> f64 {
        max_of(&self.diagnostics.err_inverse)
    }

    pub fn max_err_p(&self) -> f64 {
        max_of(&self.diagnostics.err_p)
    }

    pub fn max_err_lambda(&self) -> f64 {
        max_of(&self.diagnostics.err_lambda)
    }
}

/// Max over steps of the path-mean residual of the backward equation
/// `dY = -(A*'Y + C'Z + QX) dt + Z dW`.
pub fn bsde_residual(state: &ConstructionState) -> f64 {
    max_of(&state.diagnostics.bsde_residual)
}

struct PathOutput {
    per_node: [Vec<f64>; 4],
    max_inverse: f64,
    terminal: f64,
    record: Option<ConstructionPath>,
}

/// Paths are processed in fixed chunks and summed in path order, so results do
/// not depend on the thread count.
const CHUNK: usize = 64;

pub fn simulate_construction(
    coeffs: &CoefficientSet,
    sol: &RiccatiSolution,
    n_paths: usize,
    seed: u64,
) -> Result<ConstructionState, RiccatiError> {
    simulate_construction_with(coeffs, sol, Noise::Seeded { seed, n_paths }, false)
}

/// Euler–Maruyama on `dX = (A* + BΘ) X dt + N X dW` and
/// `dX̃ = (-(A* + BΘ) + N²)' X̃ dt - N' X̃ dW`, `N = C + DΘ`, both started at
/// `I` and driven by the same increments.
pub fn simulate_construction_with(
    coeffs: &CoefficientSet,
    sol: &RiccatiSolution,
    noise: Noise<'_>,
    keep_paths: bool,
) -> Result<ConstructionState, RiccatiError> {
    let grid = sol.grid;
    noise.check(&grid, 1)?;
    let n = coeffs.n;
    let nodes = grid.nodes();
    let dt = grid.dt();
    let frozen = coeffs.on_grid(&grid);
    let flows: Vec<(Mat, Mat)> = frozen
        .iter()
        .zip(&sol.theta)
        .map(|(c, th)| (&c.a + &c.b * th, &c.c + &c.d * th))
        .collect();
    let eye = Mat::identity(n, n);

    let run_path = |p: usize| -> Result<PathOutput, RiccatiError> {
        let dw = noise.increments(&grid, p);
        let mut x = eye.clone();
        let mut xt = eye.clone();
        let mut per_node = [
            Vec::with_capacity(nodes),
            Vec::with_capacity(nodes),
            Vec::with_capacity(nodes),
            Vec::with_capacity(nodes),
        ];
        let mut record = keep_paths.then(|| ConstructionPath {
            x: Vec::with_capacity(nodes),
            x_tilde: Vec::with_capacity(nodes),
            y: Vec::with_capacity(nodes),
            z: Vec::with_capacity(nodes),
        });
        let mut prev: Option<(Mat, Mat, Mat)> = None;
        let mut max_inverse = 0.0f64;
        let mut terminal = 0.0;
        for k in 0..nodes {
            let (f, nn) = &flows[k];
            let pk = &sol.p[k];
            let y = pk * &x;
            let z = pk * nn * &x;
            let prod = &x * xt.transpose();
            let e_inv = (&prod - &eye).norm();
            let p_hat = &y * xt.transpose();
            let lam = &z * xt.transpose() - &p_hat * nn;
            per_node[0].push(e_inv);
            per_node[1].push((&p_hat - pk).norm());
            per_node[2].push(lam.norm());
            max_inverse = max_inverse.max(e_inv);
            let resid = match &prev {
                None => 0.0,
                Some((y0, z0, drift)) => {
                    (&y - y0 + drift * dt - z0 * dw[k - 1]).norm()
                }
            };
            per_node[3].push(resid);
            if k == grid.steps() {
                terminal = (&y - &coeffs.g * &x).norm();
            } else {
                let c = &frozen[k];
                let drift = c.a.transpose() * &y + c.c.transpose() * &z + &c.q * &x;
                let w = dw[k];
                let x_next = &x + f * &x * dt + nn * &x * w;
                let back = (nn * nn - f).transpose();
                let xt_next = &xt + back * &xt * dt - nn.transpose() * &xt * w;
                let norm = x_next.norm().max(xt_next.norm());
                if !norm.is_finite() || norm > OVERFLOW_GUARD {
                    return Err(RiccatiError::PathNonFinite { path: p, step: k });
                }
                prev = Some((y.clone(), z.clone(), drift));
                if let Some(r) = record.as_mut() {
                    r.x.push(x.clone());
                    r.x_tilde.push(xt.clone());
                }
                x = x_next;
                xt = xt_next;
            }
            if let Some(r) = record.as_mut() {
                r.y.push(y);
                r.z.push(z);
            }
        }
        if let Some(r) = record.as_mut() {
            r.x.push(x);
            r.x_tilde.push(xt);
        }
        Ok(PathOutput {
            per_node,
            max_inverse,
            terminal,
            record,
        })
    };

    let n_paths = noise.n_paths();
    let mut sums = [
        vec![0.0; nodes],
        vec![0.0; nodes],
        vec![0.0; nodes],
        vec![0.0; nodes],
    ];
    let mut max_sum = 0.0;
    let mut terminal_mismatch = 0.0f64;
    let mut records = keep_paths.then(|| Vec::with_capacity(n_paths));
    for start in (0..n_paths).step_by(CHUNK) {
        let end = (start + CHUNK).min(n_paths);
        let chunk = (start..end)
            .into_par_iter()
            .map(run_path)
            .collect::<Vec<_>>()
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        for out in chunk {
            for (s, v) in sums.iter_mut().zip(&out.per_node) {
                s.iter_mut().zip(v).for_each(|(a, b)| *a += b);
            }
            max_sum += out.max_inverse;
            terminal_mismatch = terminal_mismatch.max(out.terminal);
            if let (Some(rs), Some(r)) = (records.as_mut(), out.record) {
                rs.push(r);
            }
        }
    }
    let scale = 1.0 / n_paths as f64;
    let [err_inverse, err_p, err_lambda, bsde] =
        sums.map(|v| v.into_iter().map(|s| s * scale).collect::<Vec<_>>());
    Ok(ConstructionState {
        grid,
        n_paths,
        diagnostics: ConstructionDiagnostics {
            dt,
            times: grid.times().collect(),
            err_inverse,
            err_p,
            err_lambda,
            bsde_residual: bsde,
            mean_path_max_inverse: max_sum * scale,
            terminal_mismatch,
        },
        paths: records,
    })
}
