use nalgebra::SymmetricEigen;

use super::{KernelError, Mat};

/// Relative eigenvalue threshold below which `pinv_psd` treats a direction as null.
pub const DEFAULT_PINV_TOL: f64 = 1e-10;

/// Largest tolerated `max |K - K^T|`, relative to `max(1, max |K|)`.
pub const ASYMMETRY_GUARD: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoInverse {
    pub matrix: Mat,
    pub rank: usize,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    /// Set when the smallest eigenvalue is below `-tol`; not an error.
    pub negative_spectrum: bool,
}

pub fn max_abs(m: &Mat) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}

pub fn frobenius(m: &Mat) -> f64 {
    m.norm()
}

pub fn symmetrize(m: &Mat) -> Mat {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &Mat) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// `m` is symmetric PSD up to `tol` (absolute, on the smallest eigenvalue).
pub fn is_psd(m: &Mat, tol: f64) -> bool {
    m.is_square() && min_eigenvalue(m) >= -tol
}

/// Moore–Penrose pseudo-inverse of a symmetric matrix via its eigen-decomposition.
///
/// Eigenvalues below `tol * max(1, lambda_max)` count as zero. The input is
/// symmetrized first; asymmetry beyond [`ASYMMETRY_GUARD`] is rejected.
pub fn pinv_psd(k: &Mat, tol: f64) -> Result<PseudoInverse, KernelError> {
    if !k.is_square() {
        return Err(KernelError::Dimension(format!(
            "pseudo-inverse of a {}x{} matrix",
            k.nrows(),
            k.ncols()
        )));
    }
    let n = k.nrows();
    if n == 0 {
        return Ok(PseudoInverse {
            matrix: Mat::zeros(0, 0),
            rank: 0,
            min_eigenvalue: 0.0,
            max_eigenvalue: 0.0,
            negative_spectrum: false,
        });
    }
    let asymmetry = max_abs(&(k - k.transpose()));
    if asymmetry > ASYMMETRY_GUARD * max_abs(k).max(1.0) || !asymmetry.is_finite() {
        return Err(KernelError::NotSymmetric { asymmetry });
    }
    let eig = SymmetricEigen::new(symmetrize(k));
    let max_eigenvalue = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min_eigenvalue = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let cutoff = tol * max_eigenvalue.abs().max(1.0);
    let mut matrix = Mat::zeros(n, n);
    let mut rank = 0;
    for (i, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda.abs() > cutoff {
            rank += 1;
            let v = eig.eigenvectors.column(i);
            matrix += (v * v.transpose()) / lambda;
        }
    }
    Ok(PseudoInverse {
        matrix: symmetrize(&matrix),
        rank,
        min_eigenvalue,
        max_eigenvalue,
        negative_spectrum: min_eigenvalue < -tol,
    })
}

/// Solves `K X = B` for symmetric positive-definite `K` (Cholesky).
pub fn spd_solve(k: &Mat, b: &Mat) -> Option<Mat> {
    symmetrize(k).cholesky().map(|c| c.solve(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use crate::kernels::Vector;

    #[test]
    fn identity_is_its_own_pseudo_inverse() {
        let p = pinv_psd(&Mat::identity(3, 3), DEFAULT_PINV_TOL).unwrap();
        assert_eq!(p.rank, 3);
        assert!(max_abs(&(p.matrix - Mat::identity(3, 3))) < 1e-15);
    }

    #[test]
    fn rank_deficient_diagonal() {
        let k = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 0.0]));
        let p = pinv_psd(&k, DEFAULT_PINV_TOL).unwrap();
        assert_eq!(p.rank, 1);
        let expect = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![0.5, 0.0]));
        assert!(max_abs(&(p.matrix - expect)) < 1e-15);
    }

    #[test]
    fn asymmetric_input_rejected() {
        let k = Mat::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(
            pinv_psd(&k, DEFAULT_PINV_TOL),
            Err(KernelError::NotSymmetric { .. })
        ));
    }

    #[test]
    fn negative_spectrum_is_flagged_not_fatal() {
        let k = Mat::from_diagonal(&nalgebra::DVector::from_vec(vec![1.0, -0.5]));
        let p = pinv_psd(&k, DEFAULT_PINV_TOL).unwrap();
        assert!(p.negative_spectrum);
        assert_eq!(p.rank, 2);
    }

    /// `Q diag(λ) Q'` with each `λ` either zero or in `[0.1, 10]`, so the rank
    /// is unambiguous at the default cutoff.
    fn psd_matrix() -> impl Strategy<Value = Mat> {
        (1usize..=8).prop_flat_map(|n| {
            (
                prop::collection::vec(-1.0f64..1.0, n * n),
                prop::collection::vec(prop_oneof![Just(0.0), 0.1f64..10.0], n),
            )
                .prop_map(move |(raw, spectrum)| {
                    let q = Mat::from_vec(n, n, raw).qr().q();
                    &q * Mat::from_diagonal(&Vector::from_vec(spectrum)) * q.transpose()
                })
        })
    }

    proptest! {
        #[test]
        fn penrose_identities_hold(k in psd_matrix()) {
            let p = pinv_psd(&k, DEFAULT_PINV_TOL).unwrap();
            let kp = &p.matrix;
            let scale = max_abs(&k).max(1.0);
            let pscale = max_abs(kp).max(1.0);
            prop_assert!(max_abs(&(kp - kp.transpose())) <= 1e-12 * pscale);
            prop_assert!(max_abs(&(&k * kp * &k - &k)) <= 1e-10 * scale);
            prop_assert!(max_abs(&(kp * &k * kp - kp)) <= 1e-10 * pscale);
            let kkp = &k * kp;
            let kpk = kp * &k;
            prop_assert!(max_abs(&(&kkp - kkp.transpose())) <= 1e-10);
            prop_assert!(max_abs(&(&kpk - kpk.transpose())) <= 1e-10);
        }
    }
}
