use rand::Rng;
use rand_distr::StandardNormal;

use crate::kernels::{max_abs, path_rng, Mat, Vector};

use super::{child, noise_at, TreeError, TreeModel, TreeSolution};

/// An adapted control on the tree: node `(k, h)` and the state reached there.
pub trait TreeControl {
    fn control(&self, k: usize, h: usize, x: &Vector) -> Vector;
}

impl<F> TreeControl for F
where
    F: Fn(usize, usize, &Vector) -> Vector,
{
    fn control(&self, k: usize, h: usize, x: &Vector) -> Vector {
        self(k, h, x)
    }
}

/// Open-loop node controls `u[k][h]`.
impl TreeControl for Vec<Vec<Vector>> {
    fn control(&self, k: usize, h: usize, _x: &Vector) -> Vector {
        self[k][h].clone()
    }
}

/// Exact value matrix `V_0` of the feedback `u = theta[k][h] x`, so that the
/// closed-loop cost from `eta` is `½ eta' V_0 eta`.
pub fn closed_loop_value(model: &TreeModel, theta: &[Vec<Mat>]) -> Mat {
    let mut v = model.terminal.clone();
    for k in (0..model.depth).rev() {
        v = (0..1usize << k)
            .map(|h| {
                let c = model.node(k, h);
                let th = &theta[k][h];
                let up = &c.a + &c.c + (&c.b + &c.d) * th;
                let dn = &c.a - &c.c + (&c.b - &c.d) * th;
                let (v_up, v_dn) = (&v[child(k, h, true)], &v[child(k, h, false)]);
                &c.q + th.transpose() * &c.r * th
                    + (up.transpose() * v_up * &up + dn.transpose() * v_dn * &dn) * 0.5
            })
            .collect();
    }
    v.swap_remove(0)
}

/// Largest entry of `½(V_0(Θ + (I - K†K) θ̂) - V_0(Θ))` for one perturbation.
pub fn feedback_family_gap(model: &TreeModel, sol: &TreeSolution, theta_hat: &[Vec<Mat>]) -> f64 {
    let shifted: Vec<Vec<Mat>> = sol
        .theta
        .iter()
        .enumerate()
        .map(|(k, row)| {
            row.iter()
                .enumerate()
                .map(|(h, th)| th + sol.null_projector(k, h) * &theta_hat[k][h])
                .collect()
        })
        .collect();
    let base = closed_loop_value(model, &sol.theta);
    let moved = closed_loop_value(model, &shifted);
    0.5 * max_abs(&(moved - base))
}

/// Maximum [`feedback_family_gap`] over `draws` seeded Gaussian `θ̂`.
pub fn feedback_family_check(
    model: &TreeModel,
    sol: &TreeSolution,
    draws: usize,
    seed: u64,
) -> Result<f64, TreeError> {
    if let Some((time, node)) = sol.first_infeasible() {
        return Err(TreeError::RangeConditionViolated { time, node });
    }
    let (n, m) = (model.n, model.m);
    Ok((0..draws)
        .map(|d| {
            let mut rng = path_rng(seed, d);
            let theta_hat: Vec<Vec<Mat>> = (0..model.depth)
                .map(|k| {
                    (0..1usize << k)
                        .map(|_| Mat::from_fn(m, n, |_, _| rng.sample(StandardNormal)))
                        .collect()
                })
                .collect();
            feedback_family_gap(model, sol, &theta_hat)
        })
        .fold(0.0, f64::max))
}

/// `J(u) - ½<P_0 eta, eta> - ½ E Σ_k <K_k (u - Θx), u - Θx>` by exact
/// enumeration of the tree.
pub fn tree_completion_check<U: TreeControl + ?Sized>(
    model: &TreeModel,
    sol: &TreeSolution,
    u: &U,
    eta: &Vector,
) -> Result<f64, TreeError> {
    if let Some((time, node)) = sol.first_infeasible() {
        return Err(TreeError::RangeConditionViolated { time, node });
    }
    if eta.len() != model.n {
        return Err(TreeError::InvalidModel("initial state dimension".into()));
    }
    let mut states = vec![eta.clone()];
    let mut cost = 0.0;
    let mut gap = 0.0;
    for k in 0..model.depth {
        let weight = 1.0 / (1u64 << k) as f64;
        let mut next = vec![Vector::zeros(model.n); 1 << (k + 1)];
        for (h, x) in states.iter().enumerate() {
            let c = model.node(k, h);
            let uk = u.control(k, h, x);
            let e = &uk - &sol.theta[k][h] * x;
            cost += weight * (x.dot(&(&c.q * x)) + uk.dot(&(&c.r * &uk)));
            gap += weight * e.dot(&(&sol.k[k][h] * &e));
            for up in [false, true] {
                let w = noise_at(child(k, h, up), k);
                next[child(k, h, up)] = (&c.a + &c.c * w) * x + (&c.b + &c.d * w) * &uk;
            }
        }
        states = next;
    }
    let weight = 1.0 / (1u64 << model.depth) as f64;
    cost += weight
        * states
            .iter()
            .zip(&model.terminal)
            .map(|(x, g)| x.dot(&(g * x)))
            .sum::<f64>();
    Ok(0.5 * cost - 0.5 * eta.dot(&(sol.p0() * eta)) - 0.5 * gap)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tree::{qp_oracle, random_tree_model, solve_bsre_tree, RandomTreeOptions, TreeCoefficients};

    #[test]
    fn optimal_feedback_value_matches_solution() {
        let model = random_tree_model(2, 1, 5, 1, RandomTreeOptions::default()).unwrap();
        let sol = solve_bsre_tree(&model).unwrap();
        let v0 = closed_loop_value(&model, &sol.theta);
        assert!(max_abs(&(v0 - sol.p0())) < 1e-12);
    }

    #[test]
    fn full_rank_family_is_a_singleton() {
        let model = random_tree_model(2, 2, 4, 2, RandomTreeOptions::default()).unwrap();
        let sol = solve_bsre_tree(&model).unwrap();
        assert!(feedback_family_check(&model, &sol, 10, 0).unwrap() <= 1e-12);
    }

    #[test]
    fn rank_deficient_family_has_equal_values() {
        let base = random_tree_model(2, 2, 5, 3, RandomTreeOptions::default()).unwrap();
        let model = TreeModel::from_fn(
            2,
            2,
            5,
            |k, h| {
                let mut c = base.node(k, h).clone();
                c.b.column_mut(1).fill(0.0);
                c.d.column_mut(1).fill(0.0);
                c.r = Mat::from_row_slice(2, 2, &[c.r[(0, 0)], 0.0, 0.0, 0.0]);
                c
            },
            |h| base.terminal[h].clone(),
        )
        .unwrap();
        let sol = solve_bsre_tree(&model).unwrap();
        assert!(sol.k.iter().flatten().all(|k| k[(1, 1)] == 0.0));
        assert!(feedback_family_check(&model, &sol, 10, 7).unwrap() <= 1e-10);
    }

    #[test]
    fn vanishing_k_leaves_any_feedback_optimal() {
        let mut c = TreeCoefficients::zeros(2, 1);
        c.a = Mat::from_row_slice(2, 2, &[1.0, 0.3, 0.0, 0.8]);
        c.c = Mat::identity(2, 2) * 0.4;
        c.q = Mat::identity(2, 2);
        let model = TreeModel::deterministic(4, c, Mat::identity(2, 2) * 2.0).unwrap();
        let sol = solve_bsre_tree(&model).unwrap();
        assert!(sol.k.iter().flatten().all(|k| max_abs(k) == 0.0));
        assert_eq!(feedback_family_check(&model, &sol, 10, 1).unwrap(), 0.0);
    }

    #[test]
    fn completion_is_exact() {
        for seed in 0..5 {
            let model = random_tree_model(1, 1, 8, seed, RandomTreeOptions::default()).unwrap();
            let sol = solve_bsre_tree(&model).unwrap();
            let eta = Vector::from_element(1, 0.7);
            let theta = sol.theta.clone();
            let opt = tree_completion_check(&model, &sol, &|k: usize, h: usize, x: &Vector| &theta[k][h] * x, &eta)
                .unwrap();
            assert!(opt.abs() <= 1e-12, "{opt}");
            let mut rng = path_rng(seed, 99);
            let u: Vec<Vec<Vector>> = (0..8)
                .map(|k| (0..1 << k).map(|_| Vector::from_element(1, rng.sample(StandardNormal))).collect())
                .collect();
            let res = tree_completion_check(&model, &sol, &u, &eta).unwrap();
            assert!(res.abs() <= 1e-10, "{res}");
            let zero = tree_completion_check(&model, &sol, &u, &Vector::zeros(1)).unwrap();
            assert!(zero.abs() <= 1e-10, "{zero}");
        }
    }

    #[test]
    fn oracle_controls_satisfy_completion() {
        let model = random_tree_model(2, 2, 4, 11, RandomTreeOptions::default()).unwrap();
        let sol = solve_bsre_tree(&model).unwrap();
        let eta = Vector::from_vec(vec![0.4, -1.2]);
        let qp = qp_oracle(&model, &eta).unwrap();
        let value = 0.5 * eta.dot(&(sol.p0() * &eta));
        assert!((qp.value - value).abs() <= 1e-9 * (1.0 + value));
        assert!(tree_completion_check(&model, &sol, &qp.controls, &eta).unwrap().abs() < 1e-10);
    }

    #[test]
    fn enlarging_q_never_lowers_the_value() {
        for seed in 0..10 {
            let model = random_tree_model(2, 1, 4, seed, RandomTreeOptions::default()).unwrap();
            let (k, h) = (seed as usize % 4, 0);
            let mut bigger = model.clone();
            bigger.nodes[k][h].q += Mat::identity(2, 2) * 0.5;
            let a = solve_bsre_tree(&model).unwrap();
            let b = solve_bsre_tree(&bigger).unwrap();
            let diff = b.p0() - a.p0();
            assert!(crate::kernels::min_eigenvalue(&diff) >= -1e-12);
        }
    }
}
