//! Checkers for the matrix inequalities used by the convergence analysis.
//!
//! Every block check builds the `mn x mn` matrices densely and compares them with
//! [`psd_order`]. Relative tolerances are scaled by the largest absolute entry of the
//! matrices being compared.

use nalgebra::DMatrix;
use serde::Serialize;

use super::spd::{cholesky_checked, inverse_spd, logdet_from_factor, psd_order, scale_of};
use super::{OrderCheckReport, ToolkitError, RCOND_THRESHOLD};
use crate::graph::NetworkTopology;

/// Slack allowed on log-determinant inequalities.
pub const LOGDET_TOL: f64 = 1e-8;

/// Relative residual allowed by [`woodbury_check`].
pub const WOODBURY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MarginReport {
    pub holds: bool,
    /// `rhs - lhs` of the inequality in its natural (usually log) domain.
    pub margin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ResidualReport {
    pub holds: bool,
    pub residual: f64,
}

pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let total: usize = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(total, total);
    let mut off = 0;
    for b in blocks {
        let k = b.nrows();
        out.view_mut((off, off), (k, k)).copy_from(b);
        off += k;
    }
    out
}

/// `A ⊗ I_m`.
pub fn kron_identity(a: &DMatrix<f64>, m: usize) -> DMatrix<f64> {
    a.kronecker(&DMatrix::identity(m, m))
}

/// Per-node convex combinations `Σ_j a_ji Q_j`.
pub fn combined_information(topology: &NetworkTopology, blocks: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
    let n = topology.n();
    (0..n)
        .map(|i| {
            let mut acc = DMatrix::zeros(blocks[0].nrows(), blocks[0].ncols());
            for (j, q) in blocks.iter().enumerate() {
                let a = topology.weight(j, i);
                if a != 0.0 {
                    acc += q * a;
                }
            }
            acc
        })
        .collect()
}

fn check_blocks(topology: &NetworkTopology, blocks: &[DMatrix<f64>]) -> Result<usize, ToolkitError> {
    if blocks.len() != topology.n() {
        return Err(ToolkitError::DimensionMismatch {
            expected: topology.n(),
            found: blocks.len(),
        });
    }
    let m = blocks[0].nrows();
    for b in blocks {
        if b.nrows() != m || b.ncols() != m {
            return Err(ToolkitError::DimensionMismatch {
                expected: m,
                found: b.nrows().max(b.ncols()),
            });
        }
        super::check_symmetric(b)?;
    }
    Ok(m)
}

fn relative_order(lhs: &DMatrix<f64>, rhs: &DMatrix<f64>, tol: f64) -> Result<OrderCheckReport, ToolkitError> {
    let abs_tol = tol * scale_of(lhs).max(scale_of(rhs));
    psd_order(lhs, rhs, abs_tol)
}

/// `𝒜 Q 𝒜 ⪯ Q'` where `Q = diag(Q_i)`, `Q'_i = Σ_j a_ji Q_j` and `𝒜 = A ⊗ I_m`.
pub fn check_convex_combination_order(
    topology: &NetworkTopology,
    qs: &[DMatrix<f64>],
    tol: f64,
) -> Result<OrderCheckReport, ToolkitError> {
    let m = check_blocks(topology, qs)?;
    let big_a = kron_identity(topology.weights(), m);
    let lhs = &big_a * block_diag(qs) * &big_a;
    let rhs = block_diag(&combined_information(topology, qs));
    relative_order(&lhs, &rhs, tol)
}

/// Both information orderings after a combine step, given the adapted information
/// blocks `P̄_i^{-1}`:
///
/// * `𝒜 P̄^{-1} 𝒜 ⪯ P^{-1}`
/// * `𝒜 P 𝒜 ⪯ P̄`
///
/// where `P_i^{-1} = Σ_j a_ji P̄_j^{-1}`.
pub fn check_information_order(
    topology: &NetworkTopology,
    pbar_inv: &[DMatrix<f64>],
    tol: f64,
) -> Result<(OrderCheckReport, OrderCheckReport), ToolkitError> {
    let m = check_blocks(topology, pbar_inv)?;
    let big_a = kron_identity(topology.weights(), m);
    let p_inv = combined_information(topology, pbar_inv);

    let first = relative_order(&(&big_a * block_diag(pbar_inv) * &big_a), &block_diag(&p_inv), tol)?;

    let p = p_inv.iter().map(inverse_spd).collect::<Result<Vec<_>, _>>()?;
    let pbar = pbar_inv.iter().map(inverse_spd).collect::<Result<Vec<_>, _>>()?;
    let second = relative_order(&(&big_a * block_diag(&p) * &big_a), &block_diag(&pbar), tol)?;
    Ok((first, second))
}

/// `Σ_i log|P̄_i^{-1}| ≤ Σ_i log|P_i^{-1}|`, i.e. combining never loses information volume.
pub fn check_determinant_order(
    topology: &NetworkTopology,
    pbar_inv: &[DMatrix<f64>],
) -> Result<MarginReport, ToolkitError> {
    check_blocks(topology, pbar_inv)?;
    let before: f64 = pbar_inv
        .iter()
        .map(|b| cholesky_checked(b).map(|(c, _)| logdet_from_factor(&c)))
        .sum::<Result<f64, _>>()?;
    let after: f64 = combined_information(topology, pbar_inv)
        .iter()
        .map(|b| cholesky_checked(b).map(|(c, _)| logdet_from_factor(&c)))
        .sum::<Result<f64, _>>()?;
    let margin = after - before;
    Ok(MarginReport {
        holds: margin >= -LOGDET_TOL,
        margin,
    })
}

fn logdet_psd(m: &DMatrix<f64>) -> f64 {
    match cholesky_checked(m) {
        Ok((chol, rcond)) if rcond >= RCOND_THRESHOLD => logdet_from_factor(&chol),
        _ => f64::NEG_INFINITY,
    }
}

/// Ky Fan concavity of the log-determinant:
/// `log|Σ λ_i A_i| ≥ Σ λ_i log|A_i|` for convex weights and PSD `A_i`.
///
/// Singular `A_i` with positive weight make the right-hand side `-∞`.
pub fn check_ky_fan(lambdas: &[f64], mats: &[DMatrix<f64>]) -> Result<MarginReport, ToolkitError> {
    if lambdas.len() != mats.len() || mats.is_empty() {
        return Err(ToolkitError::DimensionMismatch {
            expected: mats.len(),
            found: lambdas.len(),
        });
    }
    let sum: f64 = lambdas.iter().sum();
    if lambdas.iter().any(|&l| !(0.0..=1.0).contains(&l)) || (sum - 1.0).abs() > 1e-12 {
        return Err(ToolkitError::WeightSumInvalid { sum });
    }
    let m = mats[0].nrows();
    let mut mix = DMatrix::zeros(m, m);
    let mut rhs = 0.0;
    for (&l, a) in lambdas.iter().zip(mats) {
        if a.nrows() != m || a.ncols() != m {
            return Err(ToolkitError::DimensionMismatch {
                expected: m,
                found: a.nrows(),
            });
        }
        super::check_symmetric(a)?;
        mix += a * l;
        if l > 0.0 {
            rhs += l * logdet_psd(a);
        }
    }
    if rhs == f64::NEG_INFINITY {
        return Ok(MarginReport {
            holds: true,
            margin: f64::INFINITY,
        });
    }
    let margin = logdet_psd(&mix) - rhs;
    Ok(MarginReport {
        holds: margin >= -LOGDET_TOL,
        margin,
    })
}

fn general_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>, ToolkitError> {
    if !m.is_square() {
        return Err(ToolkitError::DimensionMismatch {
            expected: m.nrows(),
            found: m.ncols(),
        });
    }
    let sv = m.clone().svd(false, false).singular_values;
    let (lo, hi) = (sv.min(), sv.max());
    if hi == 0.0 || lo / hi < RCOND_THRESHOLD {
        return Err(ToolkitError::SingularInput);
    }
    m.clone().try_inverse().ok_or(ToolkitError::SingularInput)
}

/// Verifies the matrix inversion lemma
/// `(A + BDC)^{-1} = A^{-1} - A^{-1}B(D^{-1} + CA^{-1}B)^{-1}CA^{-1}`
/// by computing both sides independently. The residual is relative in Frobenius norm.
pub fn woodbury_check(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    c: &DMatrix<f64>,
    d: &DMatrix<f64>,
) -> Result<ResidualReport, ToolkitError> {
    let (p, q) = (a.nrows(), d.nrows());
    if b.shape() != (p, q) || c.shape() != (q, p) {
        return Err(ToolkitError::DimensionMismatch {
            expected: p,
            found: b.nrows(),
        });
    }
    let lhs = general_inverse(&(a + b * d * c))?;
    let a_inv = general_inverse(a)?;
    let inner = general_inverse(&(general_inverse(d)? + c * &a_inv * b))?;
    let rhs = &a_inv - &a_inv * b * inner * c * &a_inv;
    let residual = (&lhs - &rhs).norm() / lhs.norm().max(f64::MIN_POSITIVE);
    Ok(ResidualReport {
        holds: residual <= WOODBURY_TOL,
        residual,
    })
}

/// `(Σ a_j)^r ≤ m^{r-1} Σ a_j^r` for `r ≥ 1`, and `(Σ a_j)^r ≤ Σ a_j^r` for `0 ≤ r ≤ 1`.
/// The margin is relative to the right-hand side.
pub fn cr_inequality(values: &[f64], r: f64) -> Result<MarginReport, ToolkitError> {
    if values.is_empty() || r < 0.0 || values.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(ToolkitError::InvalidArgument(
            "cr inequality needs nonempty nonnegative values and r >= 0".into(),
        ));
    }
    let m = values.len() as f64;
    let lhs = values.iter().sum::<f64>().powf(r);
    let power_sum: f64 = values.iter().map(|v| v.powf(r)).sum();
    let rhs = if r >= 1.0 { m.powf(r - 1.0) * power_sum } else { power_sum };
    let margin = (rhs - lhs) / rhs.max(1.0);
    Ok(MarginReport {
        holds: margin >= -1e-12,
        margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn scalar(x: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, x)
    }

    fn averaging_pair() -> NetworkTopology {
        NetworkTopology::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap()
    }

    fn three() -> NetworkTopology {
        NetworkTopology::from_rows(&crate::graph::three_node_weights()).unwrap()
    }

    #[test]
    fn convex_combination_identity_weights_is_equality() {
        // a single node is the only connected identity network
        let t = NetworkTopology::identity(1).unwrap();
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = check_convex_combination_order(&t, &[q], 1e-9).unwrap();
        assert!(r.holds);
        assert_eq!(r.worst_eig, 0.0);
    }

    #[test]
    fn convex_combination_common_block_holds() {
        let t = three();
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = check_convex_combination_order(&t, &[q.clone(), q.clone(), q], 1e-9).unwrap();
        assert!(r.holds, "{r:?}");
    }

    #[test]
    fn information_order_scalar_pair() {
        // P̄^{-1} = (1, 3) averages to P^{-1} = (2, 2); both differences are singular PSD
        let t = averaging_pair();
        let (first, second) = check_information_order(&t, &[scalar(1.0), scalar(3.0)], 1e-9).unwrap();
        assert!(first.holds && second.holds);
        assert_abs_diff_eq!(first.worst_eig, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(second.worst_eig, 0.0, epsilon = 1e-12);

        let p_inv = combined_information(&t, &[scalar(1.0), scalar(3.0)]);
        assert_eq!(p_inv[0][(0, 0)], 2.0);
        assert_eq!(p_inv[1][(0, 0)], 2.0);
    }

    #[test]
    fn determinant_order_scalar_pair() {
        let r = check_determinant_order(&averaging_pair(), &[scalar(1.0), scalar(3.0)]).unwrap();
        assert!(r.holds);
        assert_abs_diff_eq!(r.margin, (4.0f64 / 3.0).ln(), epsilon = 1e-14);
    }

    #[test]
    fn determinant_order_single_node_is_equality() {
        let t = NetworkTopology::identity(1).unwrap();
        let q = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = check_determinant_order(&t, &[q]).unwrap();
        assert_eq!(r.margin, 0.0);
    }

    #[test]
    fn ky_fan_equal_matrices_is_equality() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let r = check_ky_fan(&[0.3, 0.7], &[a.clone(), a.clone()]).unwrap();
        assert_abs_diff_eq!(r.margin, 0.0, epsilon = 1e-14);
        let r = check_ky_fan(&[1.0], &[a]).unwrap();
        assert_eq!(r.margin, 0.0);
    }

    #[test]
    fn ky_fan_singular_member_is_trivial() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let b = DMatrix::<f64>::identity(2, 2);
        let r = check_ky_fan(&[0.5, 0.5], &[a, b]).unwrap();
        assert!(r.holds);
        assert_eq!(r.margin, f64::INFINITY);
    }

    #[test]
    fn ky_fan_rejects_bad_weights() {
        let b = DMatrix::<f64>::identity(2, 2);
        assert!(matches!(
            check_ky_fan(&[0.5, 0.6], &[b.clone(), b]),
            Err(ToolkitError::WeightSumInvalid { .. })
        ));
    }

    #[test]
    fn woodbury_zero_update() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let b = DMatrix::zeros(2, 1);
        let c = DMatrix::zeros(1, 2);
        let d = DMatrix::identity(1, 1);
        let r = woodbury_check(&a, &b, &c, &d).unwrap();
        assert!(r.holds);
        assert!(r.residual < 1e-15);
    }

    #[test]
    fn woodbury_reproduces_rank_one_downdate() {
        // A = P^{-1}, B = φ, C = φ^T, D = 1 gives (P^{-1} + φφ^T)^{-1} = P - bPφφ^T P
        let p = DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.7]);
        let phi = DVector::from_vec(vec![0.3, -1.1]);
        let p_inv = inverse_spd(&p).unwrap();
        let b_col = DMatrix::from_column_slice(2, 1, phi.as_slice());
        let r = woodbury_check(&p_inv, &b_col, &b_col.transpose(), &DMatrix::identity(1, 1)).unwrap();
        assert!(r.holds);

        let gain = 1.0 / (1.0 + (phi.transpose() * &p * &phi)[(0, 0)]);
        let downdate = &p - (&p * &phi * phi.transpose() * &p) * gain;
        let direct = inverse_spd(&(&p_inv + &phi * phi.transpose())).unwrap();
        assert!((downdate - direct).abs().max() < 1e-12);
    }

    #[test]
    fn woodbury_singular_input() {
        let a = DMatrix::zeros(2, 2);
        let b = DMatrix::identity(2, 2);
        let r = woodbury_check(&a, &b, &b, &b);
        assert_eq!(r, Err(ToolkitError::SingularInput));
    }

    #[test]
    fn cr_inequality_cases() {
        let v = [0.5, 2.0, 0.0, 1.25];
        for r in [0.5, 1.0, 2.0] {
            assert!(cr_inequality(&v, r).unwrap().holds, "r = {r}");
        }
        // equality at r = 1
        assert_abs_diff_eq!(cr_inequality(&v, 1.0).unwrap().margin, 0.0, epsilon = 1e-15);
        assert!(cr_inequality(&[-1.0], 2.0).is_err());
    }

    #[test]
    fn block_helpers() {
        let bd = block_diag(&[scalar(1.0), DMatrix::identity(2, 2) * 3.0]);
        assert_eq!(bd.shape(), (3, 3));
        assert_eq!(bd[(2, 2)], 3.0);
        assert_eq!(bd[(0, 1)], 0.0);
        let k = kron_identity(averaging_pair().weights(), 2);
        assert_eq!(k.shape(), (4, 4));
        assert_eq!(k[(0, 2)], 0.5);
        assert_eq!(k[(0, 1)], 0.0);
    }
}
