use rand::Rng;
use rand_distr::StandardNormal;

use crate::kernels::{path_rng, symmetrize, Mat};

use super::CoefficientSet;

fn gaussian(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

fn gram(rng: &mut impl Rng, n: usize, scale: f64) -> Mat {
    let f = gaussian(rng, n, n, 1.0);
    symmetrize(&(&f * f.transpose() * (scale / n as f64)))
}

/// Seeded constant-coefficient instance with multiplicative noise:
/// `Q, G >= 0`, `R >= I`.
pub fn random_instance(n: usize, m: usize, seed: u64) -> CoefficientSet {
    let mut rng = path_rng(seed, 0);
    let a = gaussian(&mut rng, n, n, 0.5);
    let a1 = gaussian(&mut rng, n, n, 0.2);
    let b = gaussian(&mut rng, n, m, 0.5);
    let c = gaussian(&mut rng, n, n, 0.3);
    let d = gaussian(&mut rng, n, m, 0.3);
    let q = gram(&mut rng, n, 1.0);
    let r = Mat::identity(m, m) + gram(&mut rng, m, 0.5);
    let g = gram(&mut rng, n, 1.0);
    CoefficientSet::new(n, m)
        .with_a(a)
        .with_a1(a1)
        .with_b(b)
        .with_c(c)
        .with_d(d)
        .with_q(q)
        .with_r(r)
        .with_g(g)
}

/// Same family without noise (`C = D = 0`).
pub fn random_lq_instance(n: usize, m: usize, seed: u64) -> CoefficientSet {
    let mut set = random_instance(n, m, seed);
    set.c = Mat::zeros(n, n).into();
    set.d = Mat::zeros(n, m).into();
    set
}
