//! Symmetric positive (semi)definite matrix utilities.
//!
//! Everything here works on dense `DMatrix<f64>`; the dimensions involved
//! (parameter size m, or block matrices of size mn) are small.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use serde::Serialize;

use super::ToolkitError;

/// Symmetry tolerance, scaled by the largest absolute entry.
pub const SYMMETRY_TOL: f64 = 1e-12;

/// Reciprocal condition threshold below which a factorization is treated as singular.
pub const RCOND_THRESHOLD: f64 = 1e-14;

/// A square matrix known to be symmetric within [`SYMMETRY_TOL`].
#[derive(Debug, Clone, PartialEq)]
pub struct SpdMatrix(DMatrix<f64>);

impl SpdMatrix {
    pub fn new(entries: DMatrix<f64>) -> Result<Self, ToolkitError> {
        check_symmetric(&entries)?;
        Ok(Self(entries))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }
}

impl AsRef<DMatrix<f64>> for SpdMatrix {
    fn as_ref(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// Result of a Loewner-order comparison `A ⪯ B`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrderCheckReport {
    pub holds: bool,
    /// Smallest eigenvalue of `B - A`.
    pub worst_eig: f64,
    /// Unit eigenvector achieving `worst_eig`.
    pub witness: Vec<f64>,
}

/// Largest absolute entry, floored at 1. Used to turn relative tolerances into absolute ones.
pub fn scale_of(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(1.0_f64, |acc, x| acc.max(x.abs()))
}

pub fn check_symmetric(m: &DMatrix<f64>) -> Result<(), ToolkitError> {
    if !m.is_square() {
        return Err(ToolkitError::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let tol = SYMMETRY_TOL * scale_of(m);
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > tol {
                return Err(ToolkitError::NotSymmetric { row: i, col: j });
            }
        }
    }
    Ok(())
}

/// `X <- (X + X^T) / 2`, in place.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

fn is_diagonal(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == 0.0))
}

/// Cholesky factorization that refuses non-finite, non-PD or badly conditioned input.
///
/// The reciprocal condition estimate is `(min L_ii / max L_ii)^2`.
pub fn cholesky_checked(m: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64), ToolkitError> {
    if !m.is_square() {
        return Err(ToolkitError::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    if m.iter().any(|x| !x.is_finite()) {
        return Err(ToolkitError::NotPositiveDefinite);
    }
    let chol = Cholesky::new(m.clone()).ok_or(ToolkitError::NotPositiveDefinite)?;
    let rcond = rcond_from_factor(&chol);
    Ok((chol, rcond))
}

pub fn rcond_from_factor(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    let n = l.nrows();
    if n == 0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
    for i in 0..n {
        let d = l[(i, i)].abs();
        lo = lo.min(d);
        hi = hi.max(d);
    }
    if hi == 0.0 {
        0.0
    } else {
        (lo / hi).powi(2)
    }
}

/// Inverse of an SPD matrix through its Cholesky factor, symmetrized.
pub fn inverse_spd(m: &DMatrix<f64>) -> Result<DMatrix<f64>, ToolkitError> {
    let (chol, rcond) = cholesky_checked(m)?;
    if rcond < RCOND_THRESHOLD {
        return Err(ToolkitError::SingularInput);
    }
    let mut inv = chol.inverse();
    symmetrize(&mut inv);
    Ok(inv)
}

/// Log-determinant of an SPD matrix. Diagonal input is summed directly.
pub fn logdet_spd(m: &DMatrix<f64>) -> Result<f64, ToolkitError> {
    check_symmetric(m)?;
    if is_diagonal(m) {
        let mut acc = 0.0;
        for i in 0..m.nrows() {
            let d = m[(i, i)];
            if d <= 0.0 || !d.is_finite() {
                return Err(ToolkitError::NotPositiveDefinite);
            }
            acc += d.ln();
        }
        return Ok(acc);
    }
    let (chol, _) = cholesky_checked(m)?;
    Ok(logdet_from_factor(&chol))
}

pub fn logdet_from_factor(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Eigenvalues and eigenvectors of a symmetric matrix.
pub fn sym_eigen(m: &DMatrix<f64>) -> SymmetricEigen<f64, Dyn> {
    SymmetricEigen::new(m.clone())
}

pub fn lambda_min(m: &DMatrix<f64>) -> f64 {
    sym_eigen(m).eigenvalues.min()
}

pub fn lambda_max(m: &DMatrix<f64>) -> f64 {
    sym_eigen(m).eigenvalues.max()
}

/// Checks `A ⪯ B`, i.e. `B - A ⪰ -tol·I`, via a symmetric eigensolve of the difference.
pub fn psd_order(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    tol: f64,
) -> Result<OrderCheckReport, ToolkitError> {
    if a.shape() != b.shape() {
        return Err(ToolkitError::DimensionMismatch {
            expected: a.nrows(),
            found: b.nrows(),
        });
    }
    check_symmetric(a)?;
    check_symmetric(b)?;
    let mut diff = b - a;
    symmetrize(&mut diff);
    if diff.nrows() == 0 {
        return Ok(OrderCheckReport {
            holds: true,
            worst_eig: 0.0,
            witness: Vec::new(),
        });
    }
    let eig = sym_eigen(&diff);
    let (idx, worst) = eig
        .eigenvalues
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (i, v)| if v < best.1 { (i, v) } else { best });
    Ok(OrderCheckReport {
        holds: worst >= -tol,
        worst_eig: worst,
        witness: eig.eigenvectors.column(idx).iter().copied().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn logdet_identity_is_zero() {
        for m in 1..5 {
            assert_eq!(logdet_spd(&DMatrix::identity(m, m)).unwrap(), 0.0);
        }
    }

    #[test]
    fn logdet_diagonal() {
        let d = SpdMatrix::from_diagonal(&[2.0, 8.0]);
        assert_abs_diff_eq!(logdet_spd(d.as_matrix()).unwrap(), 16f64.ln(), epsilon = 1e-15);
    }

    #[test]
    fn logdet_plus_logdet_of_inverse_vanishes() {
        let x = DMatrix::from_row_slice(3, 3, &[2.0, 0.3, -0.1, 0.3, 1.5, 0.2, -0.1, 0.2, 0.9]);
        let inv = inverse_spd(&x).unwrap();
        let s = logdet_spd(&x).unwrap() + logdet_spd(&inv).unwrap();
        assert!(s.abs() < 1e-9, "{s}");
    }

    #[test]
    fn logdet_rejects_indefinite() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert_eq!(logdet_spd(&x), Err(ToolkitError::NotPositiveDefinite));
        let d = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert_eq!(logdet_spd(&d), Err(ToolkitError::NotPositiveDefinite));
    }

    #[test]
    fn psd_order_examples() {
        let i = DMatrix::<f64>::identity(3, 3);
        let r = psd_order(&i, &(&i * 2.0), 0.0).unwrap();
        assert!(r.holds);
        assert_abs_diff_eq!(r.worst_eig, 1.0, epsilon = 1e-14);

        let r = psd_order(&(&i * 2.0), &i, 0.0).unwrap();
        assert!(!r.holds);
        assert_abs_diff_eq!(r.worst_eig, -1.0, epsilon = 1e-14);

        let r = psd_order(&i, &i, 0.0).unwrap();
        assert!(r.holds);
        assert_eq!(r.worst_eig, 0.0);
    }

    #[test]
    fn psd_order_witness_attains_worst_eig() {
        let a = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 1.0]);
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 2.0]);
        let r = psd_order(&a, &b, 1e-12).unwrap();
        let w = DVector::from_vec(r.witness.clone());
        let q = (w.transpose() * (&b - &a) * &w)[(0, 0)];
        assert_abs_diff_eq!(q, r.worst_eig, epsilon = 1e-12);
        assert!(!r.holds);
    }

    #[test]
    fn psd_order_errors() {
        let a = DMatrix::<f64>::identity(2, 2);
        let b = DMatrix::<f64>::identity(3, 3);
        assert!(matches!(
            psd_order(&a, &b, 0.0),
            Err(ToolkitError::DimensionMismatch { .. })
        ));
        let ns = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert_eq!(
            psd_order(&ns, &a, 0.0),
            Err(ToolkitError::NotSymmetric { row: 0, col: 1 })
        );
    }

    #[test]
    fn spd_matrix_rejects_asymmetric() {
        let ns = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(SpdMatrix::new(ns).is_err());
        assert_eq!(SpdMatrix::identity(4).dim(), 4);
    }

    #[test]
    fn inverse_guard_trips_on_near_singular() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1e-300]);
        assert_eq!(inverse_spd(&x), Err(ToolkitError::SingularInput));
    }
}
