//! SPD utilities and executable checks for the matrix inequalities behind the
//! convergence analysis of the diffusion estimator.

mod lemmas;
pub mod random;
mod spd;
mod suite;

use thiserror::Error;

pub use lemmas::{
    block_diag, check_convex_combination_order, check_determinant_order, check_information_order,
    check_ky_fan, combined_information, cr_inequality, kron_identity, woodbury_check, MarginReport,
    ResidualReport, LOGDET_TOL, WOODBURY_TOL,
};
pub use spd::{
    check_symmetric, cholesky_checked, inverse_spd, lambda_max, lambda_min, logdet_from_factor,
    logdet_spd, psd_order, rcond_from_factor, scale_of, sym_eigen, symmetrize, OrderCheckReport,
    SpdMatrix, RCOND_THRESHOLD, SYMMETRY_TOL,
};
pub use suite::{run_lemma_suite, LemmaKind, SuiteConfig, SuiteReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ToolkitError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix is not symmetric at ({row}, {col})")]
    NotSymmetric { row: usize, col: usize },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("convex weights are invalid (sum {sum})")]
    WeightSumInvalid { sum: f64 },
    #[error("a matrix that must be inverted is singular or badly conditioned")]
    SingularInput,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}
