//! Dense linear algebra shared by the spectral and semigroup modules.
//!
//! Everything here operates on `nalgebra` matrices; the general complex
//! eigendecomposition is delegated to `faer` (the only solver of that kind
//! available to us) and converted back. Matrices of interest are small
//! (basis cardinality is a few dozen to a few hundred), so dense
//! factorizations are the right tool.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

/// Complex dense matrix in basis coordinates.
pub type CMat = DMatrix<Complex64>;
/// Complex dense vector in basis coordinates.
pub type CVec = DVector<Complex64>;
/// Real dense matrix in basis coordinates.
pub type RMat = DMatrix<f64>;
/// Real dense vector in basis coordinates.
pub type RVec = DVector<f64>;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("eigendecomposition failed to converge")]
    NoConvergence,
    #[error("eigenvector matrix is defective or near-singular (cond = {cond:.3e})")]
    Defective { cond: f64 },
    #[error("linear solve on a singular matrix")]
    Singular,
}

/// Promote a real matrix to complex entries.
pub fn complexify(m: &RMat) -> CMat {
    m.map(|x| Complex64::new(x, 0.0))
}

/// All singular values (descending), via faer.
fn singular_values(m: &CMat) -> Vec<f64> {
    let fm = faer::Mat::<faer::c64>::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)]);
    fm.singular_values().expect("svd convergence")
}

/// Largest singular value (operator 2-norm).
pub fn op_norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    singular_values(m)[0]
}

/// Eigendecomposition of a general complex matrix: `M = V diag(values) V^-1`.
pub struct Eig {
    pub values: Vec<Complex64>,
    /// Right eigenvectors as columns.
    pub vectors: CMat,
    /// Inverse of the eigenvector matrix (rows are scaled left eigenvectors).
    pub vectors_inv: CMat,
    /// 2-norm condition number of the eigenvector matrix.
    pub cond: f64,
}

/// Condition-number guard above which a propagator is considered defective.
pub const DEFECTIVE_COND: f64 = 1e8;

/// General complex eigendecomposition via faer, eigenvalues sorted by
/// (real part, imaginary part) for deterministic downstream ordering.
pub fn eig(m: &CMat) -> Result<Eig, LinalgError> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "eig requires a square matrix");
    let fm = faer::Mat::<faer::c64>::from_fn(n, n, |i, j| m[(i, j)]);
    let evd = fm.eigen().map_err(|_| LinalgError::NoConvergence)?;
    let s = evd.S();
    let sv = s.column_vector();
    let u = evd.U();

    // Sort for determinism: faer's internal ordering is not specified.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        let (la, lb) = (sv[a], sv[b]);
        la.re
            .partial_cmp(&lb.re)
            .unwrap()
            .then(la.im.partial_cmp(&lb.im).unwrap())
    });

    let values: Vec<Complex64> = order.iter().map(|&k| sv[k]).collect();
    let vectors = CMat::from_fn(n, n, |i, j| u[(i, order[j])]);

    let sing = singular_values(&vectors);
    let cond = sing[0] / sing[n - 1].max(f64::MIN_POSITIVE);
    if cond > DEFECTIVE_COND {
        return Err(LinalgError::Defective { cond });
    }
    let vectors_inv = vectors
        .clone()
        .lu()
        .try_inverse()
        .ok_or(LinalgError::Singular)?;

    Ok(Eig {
        values,
        vectors,
        vectors_inv,
        cond,
    })
}

impl Eig {
    /// Apply the analytic function `f` to the matrix: `V f(diag) V^-1`.
    pub fn apply_fn(&self, f: impl Fn(Complex64) -> Complex64) -> CMat {
        let n = self.values.len();
        let mut scaled = self.vectors.clone();
        for j in 0..n {
            let fj = f(self.values[j]);
            for i in 0..n {
                scaled[(i, j)] *= fj;
            }
        }
        &scaled * &self.vectors_inv
    }

    /// Matrix exponential `e^{tM}`.
    pub fn exp(&self, t: f64) -> CMat {
        self.apply_fn(|l| (l * t).exp())
    }
}

/// Solve `M x = b` by LU with partial pivoting.
pub fn solve(m: &CMat, b: &CVec) -> Result<CVec, LinalgError> {
    m.clone().lu().solve(b).ok_or(LinalgError::Singular)
}

/// `phi_1(z) = (e^z - 1)/z`, with a Taylor fallback near the removable
/// singularity (|z| < 1e-6) so eigenvalue clusters at zero stay accurate.
pub fn phi1(z: Complex64) -> Complex64 {
    if z.norm() < 1e-6 {
        // 1 + z/2 + z^2/6 + z^3/24; truncation error ~ |z|^4/120 < 1e-25.
        Complex64::new(1.0, 0.0) + z * (0.5 + z * (Complex64::new(1.0 / 6.0, 0.0) + z / 24.0))
    } else {
        (z.exp() - 1.0) / z
    }
}

/// Principal inverse square root of a complex matrix via its
/// eigendecomposition: `M^{-1/2} = V diag(lambda^{-1/2}) V^{-1}`.
pub fn inv_sqrt(m: &CMat) -> Result<CMat, LinalgError> {
    let e = eig(m)?;
    Ok(e.apply_fn(|l| 1.0 / l.sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn eig_recovers_diagonal_matrix() {
        let m = CMat::from_diagonal(&CVec::from_vec(vec![c(-1.0, 0.0), c(0.5, 2.0), c(3.0, 0.0)]));
        let e = eig(&m).unwrap();
        // Sorted by real part.
        assert_abs_diff_eq!(e.values[0].re, -1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values[1].re, 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values[1].im, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(e.values[2].re, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn eig_reconstructs_complex_symmetric_matrix() {
        // L - iS shape: real symmetric minus i * real symmetric.
        let n = 6;
        let mut m = CMat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let re = ((i * 7 + j * 7 + i * j) % 5) as f64 - 2.0;
                let im = -(((i + j) % 3) as f64);
                m[(i, j)] = c(re, im);
            }
        }
        let e = eig(&m).unwrap();
        let rec = e.apply_fn(|l| l);
        assert!(op_norm(&(&rec - &m)) < 1e-9 * op_norm(&m));
    }

    #[test]
    fn exp_of_zero_matrix_is_identity() {
        let m = CMat::zeros(4, 4);
        let e = eig(&m).unwrap();
        let ex = e.exp(1.7);
        assert!(op_norm(&(&ex - &CMat::identity(4, 4))) < 1e-12);
    }

    #[test]
    fn phi1_series_matches_direct_formula_across_threshold() {
        // Defining identity z phi1(z) + 1 = e^z holds on both sides of the
        // series threshold without cancellation amplification.
        for &r in &[1e-7, 9e-7, 2e-6, 1e-3, 0.3] {
            let z = c(r, r * 0.3);
            assert!((z * phi1(z) + 1.0 - z.exp()).norm() < 1e-15);
        }
        // Away from the cancellation regime the direct formula is accurate.
        let z = c(0.5, -0.2);
        assert!((phi1(z) - (z.exp() - 1.0) / z).norm() < 1e-14);
        assert_abs_diff_eq!(phi1(c(0.0, 0.0)).re, 1.0, epsilon = 1e-15);
    }

    #[test]
    fn inv_sqrt_squares_back_to_inverse() {
        let m = CMat::from_diagonal(&CVec::from_vec(vec![c(4.0, 0.0), c(1.0, 0.1), c(0.25, 0.0)]));
        let s = inv_sqrt(&m).unwrap();
        let prod = &s * &s * &m;
        assert!(op_norm(&(&prod - &CMat::identity(3, 3))) < 1e-10);
    }
}
