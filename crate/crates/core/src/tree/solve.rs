use crate::kernels::{pinv_psd, symmetrize, Mat, DEFAULT_PINV_TOL};

use super::{child, TreeCoefficients, TreeError, TreeModel};

/// Relative tolerance of the range test `|(I - K K†) L| <= tol (1 + |L|)`.
pub const RANGE_TOL: f64 = 1e-10;

/// Node-indexed solution of the tree recursion. `p` and `lambda` are indexed
/// `[k][h]` for `k <= depth` (with `lambda` zero at the leaves); the gain
/// quantities for `k < depth`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreeSolution {
    pub p: Vec<Vec<Mat>>,
    /// `Λ_k = E_k[P_{k+1} w_k]`
    pub lambda: Vec<Vec<Mat>>,
    pub k: Vec<Vec<Mat>>,
    pub l: Vec<Vec<Mat>>,
    pub theta: Vec<Vec<Mat>>,
    pub k_pinv: Vec<Vec<Mat>>,
    /// Range condition `R(K) ⊃ R(L)` per node.
    pub feasible: Vec<Vec<bool>>,
}

impl TreeSolution {
    pub fn p0(&self) -> &Mat {
        &self.p[0][0]
    }

    pub fn all_feasible(&self) -> bool {
        self.feasible.iter().flatten().all(|&f| f)
    }

    /// First infeasible node in time-then-history order.
    pub fn first_infeasible(&self) -> Option<(usize, usize)> {
        self.feasible
            .iter()
            .enumerate()
            .find_map(|(k, row)| row.iter().position(|&f| !f).map(|h| (k, h)))
    }

    /// `I - K† K`: projector onto the null directions of `K` at a node.
    pub fn null_projector(&self, k: usize, h: usize) -> Mat {
        let kp = &self.k_pinv[k][h];
        Mat::identity(kp.nrows(), kp.ncols()) - kp * &self.k[k][h]
    }
}

/// Exact backward recursion:
/// `K = R + E[(B+Dw)' P' (B+Dw)]`, `L = E[(B+Dw)' P' (A+Cw)]`,
/// `P = Q + E[(A+Cw)' P' (A+Cw)] - L' K† L`, `Θ = -K† L`.
/// Fails at the first node where the range condition does not hold.
pub fn solve_bsre_tree(model: &TreeModel) -> Result<TreeSolution, TreeError> {
    let sol = solve_bsre_tree_flagged(model)?;
    match sol.first_infeasible() {
        Some((time, node)) => Err(TreeError::RangeConditionViolated { time, node }),
        None => Ok(sol),
    }
}

/// Same recursion, reporting range-condition failures through
/// [`TreeSolution::feasible`] instead of an error.
pub fn solve_bsre_tree_flagged(model: &TreeModel) -> Result<TreeSolution, TreeError> {
    model.validate()?;
    let (n, depth) = (model.n, model.depth);
    let mut p: Vec<Vec<Mat>> = vec![Vec::new(); depth + 1];
    let mut lambda: Vec<Vec<Mat>> = vec![Vec::new(); depth + 1];
    let mut ks = vec![Vec::new(); depth];
    let mut ls = vec![Vec::new(); depth];
    let mut thetas = vec![Vec::new(); depth];
    let mut pinvs = vec![Vec::new(); depth];
    let mut feasible = vec![Vec::new(); depth];
    p[depth] = model.terminal.clone();
    lambda[depth] = vec![Mat::zeros(n, n); 1 << depth];
    for k in (0..depth).rev() {
        let width = 1usize << k;
        let mut p_row = Vec::with_capacity(width);
        let mut lam_row = Vec::with_capacity(width);
        for h in 0..width {
            let step = node_step(
                model.node(k, h),
                &p[k + 1][child(k, h, true)],
                &p[k + 1][child(k, h, false)],
            )?;
            feasible[k].push(step.feasible);
            p_row.push(step.p);
            lam_row.push(step.lambda);
            thetas[k].push(step.theta);
            ks[k].push(step.k);
            ls[k].push(step.l);
            pinvs[k].push(step.k_pinv);
        }
        p[k] = p_row;
        lambda[k] = lam_row;
    }
    Ok(TreeSolution {
        p,
        lambda,
        k: ks,
        l: ls,
        theta: thetas,
        k_pinv: pinvs,
        feasible,
    })
}

pub(crate) struct NodeStep {
    pub p: Mat,
    pub lambda: Mat,
    pub k: Mat,
    pub l: Mat,
    pub theta: Mat,
    pub k_pinv: Mat,
    pub feasible: bool,
}

/// One backward step at a node given the children's values.
pub(crate) fn node_step(
    c: &TreeCoefficients,
    p_up: &Mat,
    p_dn: &Mat,
) -> Result<NodeStep, TreeError> {
    let (m_up, m_dn) = (&c.a + &c.c, &c.a - &c.c);
    let (n_up, n_dn) = (&c.b + &c.d, &c.b - &c.d);
    let k = symmetrize(
        &(&c.r + (n_up.transpose() * p_up * &n_up + n_dn.transpose() * p_dn * &n_dn) * 0.5),
    );
    let l = (n_up.transpose() * p_up * &m_up + n_dn.transpose() * p_dn * &m_dn) * 0.5;
    let drift = &c.q + (m_up.transpose() * p_up * &m_up + m_dn.transpose() * p_dn * &m_dn) * 0.5;
    let k_pinv = pinv_psd(&k, DEFAULT_PINV_TOL)?.matrix;
    let gain = &k_pinv * &l;
    let leak = &l - &k * &gain;
    Ok(NodeStep {
        p: symmetrize(&(drift - l.transpose() * &gain)),
        lambda: (p_up - p_dn) * 0.5,
        feasible: leak.norm() <= RANGE_TOL * (1.0 + l.norm()),
        theta: -gain,
        k,
        l,
        k_pinv,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{max_abs, min_eigenvalue};
    use crate::tree::{random_tree_model, RandomTreeOptions};

    fn scalar(v: f64) -> Mat {
        Mat::from_element(1, 1, v)
    }

    fn one_step(d: f64) -> TreeCoefficients {
        TreeCoefficients {
            a: scalar(1.0),
            b: scalar(1.0),
            c: scalar(0.0),
            d: scalar(d),
            q: scalar(0.0),
            r: scalar(1.0),
        }
    }

    #[test]
    fn control_noise_worked_example() {
        let model = TreeModel::deterministic(1, one_step(1.0), scalar(1.0)).unwrap();
        let sol = solve_bsre_tree(&model).unwrap();
        assert_eq!(sol.k[0][0][(0, 0)], 3.0);
        assert_eq!(sol.l[0][0][(0, 0)], 1.0);
        assert!((sol.theta[0][0][(0, 0)] + 1.0 / 3.0).abs() < 1e-15);
        assert!((sol.p0()[(0, 0)] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn random_terminal_worked_example() {
        let model = TreeModel::from_fn(
            1,
            1,
            1,
            |_, _| one_step(0.0),
            |h| scalar(if h & 1 == 1 { 2.0 } else { 0.0 }),
        )
        .unwrap();
        let sol = solve_bsre_tree(&model).unwrap();
        assert!((sol.p0()[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((sol.theta[0][0][(0, 0)] + 0.5).abs() < 1e-15);
        assert_eq!(sol.lambda[0][0][(0, 0)], 1.0);
    }

    #[test]
    fn ineffective_control_gives_plain_expectation() {
        let mut c = TreeCoefficients::zeros(2, 1);
        c.a = Mat::from_row_slice(2, 2, &[1.0, 0.2, -0.1, 0.9]);
        c.c = Mat::identity(2, 2) * 0.3;
        c.q = Mat::identity(2, 2);
        c.r = scalar(1.0);
        let g = Mat::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let model = TreeModel::deterministic(3, c.clone(), g.clone()).unwrap();
        let sol = solve_bsre_tree(&model).unwrap();
        let mut expect = g;
        for k in (0..3).rev() {
            let (up, dn) = (&c.a + &c.c, &c.a - &c.c);
            expect = &c.q + (up.transpose() * &expect * &up + dn.transpose() * &expect * &dn) * 0.5;
            for h in 0..1 << k {
                assert_eq!(sol.theta[k][h], Mat::zeros(1, 2));
                assert!(max_abs(&(&sol.p[k][h] - &expect)) < 1e-13);
            }
        }
    }

    #[test]
    fn deterministic_tree_has_no_martingale_part() {
        let opts = RandomTreeOptions {
            adapted: false,
            ..Default::default()
        };
        let model = random_tree_model(2, 2, 5, 4, opts).unwrap();
        let sol = solve_bsre_tree(&model).unwrap();
        assert!(sol.lambda.iter().flatten().all(|l| max_abs(l) < 1e-14));
    }

    #[test]
    fn invariants_on_random_trees() {
        for seed in 0..10 {
            let model = random_tree_model(2, 2, 6, seed, RandomTreeOptions::default()).unwrap();
            let sol = solve_bsre_tree(&model).unwrap();
            assert_eq!(sol.p[6], model.terminal);
            for (p, k) in sol.p.iter().flatten().zip(sol.k.iter().flatten()) {
                assert!(max_abs(&(p - p.transpose())) <= 1e-12);
                assert!(min_eigenvalue(p) >= -1e-10);
                assert!(min_eigenvalue(k) >= -1e-10);
            }
        }
    }

    #[test]
    fn range_violation_is_flagged_for_indefinite_continuation() {
        // PSD data always satisfies the range condition, so feed an indefinite
        // continuation value directly: K = ½(P+ + P-) = 0 while L = ½(P+ - P-) = 1.
        let mut c = TreeCoefficients::zeros(1, 1);
        c.a = scalar(1.0);
        c.d = scalar(1.0);
        let step = node_step(&c, &scalar(1.0), &scalar(-1.0)).unwrap();
        assert!(!step.feasible);
        assert_eq!(step.k[(0, 0)], 0.0);
        assert_eq!(step.l[(0, 0)], 1.0);
        let ok = node_step(&c, &scalar(1.0), &scalar(1.0)).unwrap();
        assert!(ok.feasible);
    }
}
