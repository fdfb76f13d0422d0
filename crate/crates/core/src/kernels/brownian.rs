use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use super::{KernelError, TimeGrid};

/// Independent generator for one path. Streams are keyed by `(seed, path)`, so
/// any partition of paths across workers sees the same numbers.
pub fn path_rng(seed: u64, path: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(path as u64);
    rng
}

/// Brownian increments `N(0, dt)` of one path on `grid`.
pub fn path_increments(grid: &TimeGrid, seed: u64, path: usize) -> Vec<f64> {
    let sd = grid.dt().sqrt();
    let mut rng = path_rng(seed, path);
    (0..grid.steps())
        .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Brownian increments for `n_paths` paths, stored path-major.
#[derive(Debug, Clone, PartialEq)]
pub struct IncrementBatch {
    grid: TimeGrid,
    n_paths: usize,
    seed: u64,
    increments: Vec<f64>,
}

pub fn sample_brownian(
    grid: &TimeGrid,
    n_paths: usize,
    seed: u64,
) -> Result<IncrementBatch, KernelError> {
    if n_paths == 0 {
        return Err(KernelError::InvalidArgument("n_paths must be at least 1".into()));
    }
    let increments = (0..n_paths)
        .into_par_iter()
        .flat_map_iter(|p| path_increments(grid, seed, p))
        .collect();
    Ok(IncrementBatch {
        grid: *grid,
        n_paths,
        seed,
        increments,
    })
}

impl IncrementBatch {
    /// Wraps externally produced increments (for instance all-zero noise).
    pub fn from_raw(
        grid: TimeGrid,
        n_paths: usize,
        seed: u64,
        increments: Vec<f64>,
    ) -> Result<Self, KernelError> {
        if n_paths == 0 || increments.len() != n_paths * grid.steps() {
            return Err(KernelError::Dimension(format!(
                "{} increments for {} paths of {} steps",
                increments.len(),
                n_paths,
                grid.steps()
            )));
        }
        Ok(Self {
            grid,
            n_paths,
            seed,
            increments,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_paths(&self) -> usize {
        self.n_paths
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self, p: usize) -> &[f64] {
        let s = self.grid.steps();
        &self.increments[p * s..(p + 1) * s]
    }

    pub fn all(&self) -> &[f64] {
        &self.increments
    }

    /// Sums consecutive blocks of `factor` increments: the same Brownian paths
    /// observed on a grid `factor` times coarser.
    pub fn coarsen(&self, factor: usize) -> Result<Self, KernelError> {
        if factor == 0 || self.grid.steps() % factor != 0 {
            return Err(KernelError::InvalidArgument(format!(
                "cannot coarsen {} steps by {factor}",
                self.grid.steps()
            )));
        }
        let grid = TimeGrid::new(
            self.grid.t0(),
            self.grid.t_end(),
            self.grid.steps() / factor,
        )?;
        let increments = self
            .increments
            .chunks(factor)
            .map(|c| c.iter().sum())
            .collect();
        Ok(Self {
            grid,
            n_paths: self.n_paths,
            seed: self.seed,
            increments,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_are_reproducible() {
        let g = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let a = sample_brownian(&g, 17, 99).unwrap();
        let b = sample_brownian(&g, 17, 99).unwrap();
        assert_eq!(a, b);
        let c = sample_brownian(&g, 17, 100).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn streams_do_not_depend_on_batch_size() {
        let g = TimeGrid::new(0.0, 1.0, 20).unwrap();
        let small = sample_brownian(&g, 3, 5).unwrap();
        let large = sample_brownian(&g, 40, 5).unwrap();
        assert_eq!(small.path(2), large.path(2));
    }

    #[test]
    fn coarsening_sums_blocks() {
        let g = TimeGrid::new(0.0, 1.0, 8).unwrap();
        let fine = sample_brownian(&g, 2, 1).unwrap();
        let coarse = fine.coarsen(4).unwrap();
        assert_eq!(coarse.grid().steps(), 2);
        let expect: f64 = fine.path(1)[4..].iter().sum();
        assert_eq!(coarse.path(1)[1], expect);
        assert!(fine.coarsen(3).is_err());
    }

    #[test]
    fn zero_paths_rejected() {
        let g = TimeGrid::new(0.0, 1.0, 8).unwrap();
        assert!(sample_brownian(&g, 0, 1).is_err());
    }
}
