use crate::kernels::{max_abs, pinv_psd, spd_solve, symmetrize, Mat, Vector, DEFAULT_PINV_TOL};

use super::{noise_at, TreeError, TreeModel};

pub const MAX_ORACLE_DEPTH: usize = 12;
pub const MAX_ORACLE_CONTROLS: usize = 2000;

/// Negative Hessian eigenvalues below this count as unboundedness.
const HESSIAN_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub value: f64,
    /// Optimal control per node, `controls[k][h]`.
    pub controls: Vec<Vec<Vector>>,
    /// Whether the Hessian was singular and the minimum-norm minimizer was used.
    pub singular: bool,
}

fn offset(m: usize, k: usize, h: usize) -> usize {
    m * ((1usize << k) - 1 + h)
}

/// Brute-force minimizer over all node controls: the cost is assembled as one
/// quadratic form `½ z'Hz + g'z + c` by enumerating every path, then the
/// stationarity system `Hz = -g` is solved (minimum-norm if `H` is singular).
pub fn qp_oracle(model: &TreeModel, eta: &Vector) -> Result<QpSolution, TreeError> {
    model.validate()?;
    let (n, m, depth) = (model.n, model.m, model.depth);
    if eta.len() != n {
        return Err(TreeError::InvalidModel(format!(
            "initial state has dimension {}, expected {n}",
            eta.len()
        )));
    }
    if depth > MAX_ORACLE_DEPTH || model.control_dim() > MAX_ORACLE_CONTROLS {
        return Err(TreeError::TooLarge(format!(
            "depth {depth} with {} control coordinates",
            model.control_dim()
        )));
    }
    let dim = model.control_dim();
    let local = depth * m;
    let weight = 1.0 / (1u64 << depth) as f64;
    let mut hess = Mat::zeros(dim, dim);
    let mut grad = Vector::zeros(dim);
    let mut constant = 0.0;

    for path in 0..1usize << depth {
        let mut c = eta.clone();
        let mut s = Mat::zeros(n, local);
        let mut h_loc = Mat::zeros(local, local);
        let mut g_loc = Vector::zeros(local);
        let mut k_loc = 0.0;
        let mut global = Vec::with_capacity(local);
        for j in 0..depth {
            let h = path & ((1usize << j) - 1);
            let coef = model.node(j, h);
            let qs = &coef.q * &s;
            h_loc += s.transpose() * &qs;
            g_loc += qs.transpose() * &c;
            k_loc += c.dot(&(&coef.q * &c));
            h_loc
                .view_mut((j * m, j * m), (m, m))
                .zip_apply(&coef.r, |a, b| *a += b);
            global.extend((0..m).map(|a| offset(m, j, h) + a));
            let w = noise_at(path, j);
            let mj = &coef.a + &coef.c * w;
            let nj = &coef.b + &coef.d * w;
            c = &mj * c;
            s = &mj * s;
            s.view_mut((0, j * m), (n, m)).zip_apply(&nj, |a, b| *a += b);
        }
        let g_leaf = &model.terminal[path];
        let gs = g_leaf * &s;
        h_loc += s.transpose() * &gs;
        g_loc += gs.transpose() * &c;
        k_loc += c.dot(&(g_leaf * &c));
        for (a, &ga) in global.iter().enumerate() {
            grad[ga] += weight * g_loc[a];
            for (b, &gb) in global.iter().enumerate() {
                hess[(ga, gb)] += weight * h_loc[(a, b)];
            }
        }
        constant += weight * k_loc;
    }

    let hess = symmetrize(&hess);
    let rhs = Mat::from_column_slice(dim, 1, (-&grad).as_slice());
    let (z, singular) = match spd_solve(&hess, &rhs) {
        Some(z) => (z.column(0).into_owned(), false),
        None => {
            let pi = pinv_psd(&hess, DEFAULT_PINV_TOL)?;
            if pi.min_eigenvalue < -HESSIAN_TOL {
                return Err(TreeError::Infeasible {
                    min_eigenvalue: pi.min_eigenvalue,
                });
            }
            ((pi.matrix * rhs).column(0).into_owned(), true)
        }
    };
    let stationarity = &hess * &z + &grad;
    let scale = 1.0 + grad.norm() + max_abs(&hess) * z.norm();
    if stationarity.norm() > 1e-8 * scale {
        // Gradient outside the range of a PSD Hessian: unbounded below.
        return Err(TreeError::Infeasible {
            min_eigenvalue: 0.0,
        });
    }
    let value = 0.5 * z.dot(&(&hess * &z)) + grad.dot(&z) + 0.5 * constant;
    let controls = (0..depth)
        .map(|k| {
            (0..1usize << k)
                .map(|h| z.rows(offset(m, k, h), m).into_owned())
                .collect()
        })
        .collect();
    Ok(QpSolution {
        value,
        controls,
        singular,
    })
}
