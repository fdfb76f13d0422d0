use rayon::prelude::*;

use super::{IncrementBatch, KernelError, TimeGrid, Vector, OVERFLOW_GUARD};

/// Simulated states, `states[path][node]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathBatch {
    pub grid: TimeGrid,
    pub states: Vec<Vec<Vector>>,
}

impl PathBatch {
    pub fn n_paths(&self) -> usize {
        self.states.len()
    }

    pub fn terminal(&self, path: usize) -> &Vector {
        self.states[path].last().expect("non-empty path")
    }
}

/// `x_{k+1} = x_k + drift(t_k, x_k) dt + diffusion(t_k, x_k) dW_k` on every path.
///
/// `x0` holds either one initial state per path or a single state broadcast to
/// all paths.
pub fn euler_maruyama<Fd, Fs>(
    drift: Fd,
    diffusion: Fs,
    x0: &[Vector],
    incs: &IncrementBatch,
) -> Result<PathBatch, KernelError>
where
    Fd: Fn(f64, &Vector) -> Vector + Sync,
    Fs: Fn(f64, &Vector) -> Vector + Sync,
{
    let n_paths = incs.n_paths();
    if x0.len() != 1 && x0.len() != n_paths {
        return Err(KernelError::Dimension(format!(
            "{} initial states for {} paths",
            x0.len(),
            n_paths
        )));
    }
    let grid = *incs.grid();
    let dt = grid.dt();
    let states = (0..n_paths)
        .into_par_iter()
        .map(|p| {
            let start = if x0.len() == 1 { &x0[0] } else { &x0[p] };
            let dw = incs.path(p);
            let mut traj = Vec::with_capacity(grid.nodes());
            traj.push(start.clone());
            for (k, w) in dw.iter().enumerate() {
                let t = grid.time(k);
                let x = &traj[k];
                let next = x + drift(t, x) * dt + diffusion(t, x) * *w;
                let norm = next.norm();
                if !norm.is_finite() || norm > OVERFLOW_GUARD {
                    return Err(KernelError::PathNonFinite { path: p, step: k });
                }
                traj.push(next);
            }
            Ok(traj)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PathBatch { grid, states })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{mean_and_stderr, sample_brownian};

    #[test]
    fn zero_fields_give_constant_paths() {
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let incs = sample_brownian(&g, 4, 3).unwrap();
        let x0 = Vector::from_vec(vec![1.0, -2.0]);
        let batch = euler_maruyama(
            |_, x| x * 0.0,
            |_, x| x * 0.0,
            std::slice::from_ref(&x0),
            &incs,
        )
        .unwrap();
        assert!(batch.states.iter().flatten().all(|x| *x == x0));
    }

    #[test]
    fn deterministic_growth_matches_exponential() {
        let g = TimeGrid::new(0.0, 1.0, 1000).unwrap();
        let incs = sample_brownian(&g, 1, 0).unwrap();
        let x0 = Vector::from_element(1, 1.0);
        let batch = euler_maruyama(|_, x| x.clone(), |_, x| x * 0.0, &[x0], &incs).unwrap();
        let ratio = batch.terminal(0)[0];
        assert!((ratio - 1f64.exp()).abs() <= 2.0 * g.dt() * 1f64.exp());
    }

    #[test]
    fn exponential_martingale_has_unit_mean() {
        let g = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let incs = sample_brownian(&g, 20_000, 7).unwrap();
        let batch = euler_maruyama(
            |_, x| x * 0.0,
            |_, x| x.clone(),
            &[Vector::from_element(1, 1.0)],
            &incs,
        )
        .unwrap();
        let xt: Vec<f64> = (0..batch.n_paths()).map(|p| batch.terminal(p)[0]).collect();
        let (mean, se) = mean_and_stderr(&xt);
        assert!((mean - 1.0).abs() <= 3.0 * se, "mean {mean} se {se}");
    }

    #[test]
    fn blow_up_reports_path_and_step() {
        let g = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let incs = sample_brownian(&g, 2, 0).unwrap();
        let err = euler_maruyama(
            |_, x| x * 1e13,
            |_, x| x * 0.0,
            &[Vector::from_element(1, 1.0)],
            &incs,
        )
        .unwrap_err();
        assert_eq!(err, KernelError::PathNonFinite { path: 0, step: 0 });
    }
}
