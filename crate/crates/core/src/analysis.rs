//! Regret, excitation and Lyapunov diagnostics, and the finite-horizon regret bound constants.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::estimator::NodeState;
use crate::graph::NetworkTopology;
use crate::toolkit::{lambda_max, lambda_min};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("no records, or a horizon of zero steps")]
    EmptyRecords,
    #[error("history holds {available} steps, {needed} needed")]
    IncompleteHistory { needed: usize, available: usize },
    #[error("no noise variance bound available")]
    MissingVarianceBound,
}

/// `R = (φ^T (θ - θ_est))²`.
pub fn regret(phi: &DVector<f64>, theta_true: &DVector<f64>, theta_est: &DVector<f64>) -> Result<f64, AnalysisError> {
    for v in [theta_true, theta_est] {
        if v.len() != phi.len() {
            return Err(AnalysisError::DimensionMismatch {
                expected: phi.len(),
                found: v.len(),
            });
        }
    }
    let e = phi.dot(theta_true) - phi.dot(theta_est);
    Ok(e * e)
}

/// Network diagnostics at one time index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepRecord {
    pub k: usize,
    /// `R_{k,i}` per node.
    pub regrets: Vec<f64>,
    /// `‖θ - θ_{k,i}‖²` per node.
    pub sq_errors: Vec<f64>,
    pub r_t: f64,
    pub lambda_min_coop: f64,
    /// `Σ_i θ̃_{k,i}^T P_{k,i}^{-1} θ̃_{k,i}`.
    pub lyapunov: f64,
    /// `Σ_i log|P_{k,i}^{-1}|`.
    pub logdet_pinv_total: f64,
    /// `max_i φ_{k,i}^T P_{k,i} φ_{k,i}`.
    pub phi_p_phi_max: f64,
}

impl StepRecord {
    /// `log(r_t) / λ_min^{n,t}`.
    pub fn excitation_ratio(&self) -> f64 {
        excitation_ratio(self.r_t, self.lambda_min_coop)
    }
}

pub fn excitation_ratio(r_t: f64, lambda_min_coop: f64) -> f64 {
    r_t.ln() / lambda_min_coop
}

/// `(1/(nt)) Σ_i Σ_{k=0..t} R_{k,i}` with `t` the largest `k` among the records.
pub fn averaged_regret(records: &[StepRecord]) -> Result<f64, AnalysisError> {
    let t = records.iter().map(|r| r.k).max().ok_or(AnalysisError::EmptyRecords)?;
    let n = records[0].regrets.len();
    if t == 0 || n == 0 {
        return Err(AnalysisError::EmptyRecords);
    }
    let total: f64 = records.iter().flat_map(|r| r.regrets.iter()).sum();
    Ok(total / (n * t) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExcitationStats {
    pub r_t: f64,
    pub lambda_min_coop: f64,
}

impl ExcitationStats {
    pub fn ratio(&self) -> f64 {
        excitation_ratio(self.r_t, self.lambda_min_coop)
    }
}

fn check_p0(p0_invs: &[DMatrix<f64>], topology: &NetworkTopology) -> Result<usize, AnalysisError> {
    if p0_invs.len() != topology.n() {
        return Err(AnalysisError::DimensionMismatch {
            expected: topology.n(),
            found: p0_invs.len(),
        });
    }
    let m = p0_invs[0].nrows();
    if let Some(p) = p0_invs.iter().find(|p| p.shape() != (m, m)) {
        return Err(AnalysisError::DimensionMismatch {
            expected: m,
            found: p.nrows(),
        });
    }
    Ok(m)
}

/// Streaming `r_t` and `λ_min^{n,t}`.
///
/// `λ_min^{n,t}` only includes steps `k ≤ t - D_G + 1`, so the last `D_G - 1` pooled
/// outer-product sums wait in a queue before entering the information sum.
#[derive(Debug, Clone)]
pub struct ExcitationTracker {
    lag: usize,
    energy: f64,
    information: DMatrix<f64>,
    pending: VecDeque<DMatrix<f64>>,
    steps: usize,
}

impl ExcitationTracker {
    pub fn new(p0_invs: &[DMatrix<f64>], topology: &NetworkTopology) -> Result<Self, AnalysisError> {
        let m = check_p0(p0_invs, topology)?;
        // the block-diagonal P_0^{-1} has the union of the blocks' spectra
        let energy = p0_invs.iter().map(lambda_max).fold(f64::NEG_INFINITY, f64::max);
        let mut information = DMatrix::zeros(m, m);
        for p in p0_invs {
            information += p;
        }
        Ok(Self {
            lag: topology.diameter() - 1,
            energy,
            information,
            pending: VecDeque::new(),
            steps: 0,
        })
    }

    /// Adds `φ_{t,i}` for all nodes at the next time index.
    pub fn push(&mut self, phis: &[DVector<f64>]) -> Result<(), AnalysisError> {
        let m = self.information.nrows();
        let mut pooled = DMatrix::zeros(m, m);
        for phi in phis {
            if phi.len() != m {
                return Err(AnalysisError::DimensionMismatch {
                    expected: m,
                    found: phi.len(),
                });
            }
            self.energy += phi.norm_squared();
            pooled.ger(1.0, phi, phi, 1.0);
        }
        self.pending.push_back(pooled);
        if self.pending.len() > self.lag {
            let ready = self.pending.pop_front().expect("non-empty");
            self.information += ready;
        }
        self.steps += 1;
        Ok(())
    }

    /// Statistics at the last pushed time index.
    pub fn stats(&self) -> ExcitationStats {
        ExcitationStats {
            r_t: self.energy,
            lambda_min_coop: lambda_min(&self.information),
        }
    }

    pub fn steps(&self) -> usize {
        self.steps
    }
}

/// `r_t` and `λ_min^{n,t}` from a full regressor history, `history[k][i] = φ_{k,i}`.
pub fn excitation_stats(
    history: &[Vec<DVector<f64>>],
    p0_invs: &[DMatrix<f64>],
    topology: &NetworkTopology,
    t: usize,
) -> Result<ExcitationStats, AnalysisError> {
    let m = check_p0(p0_invs, topology)?;
    if history.len() <= t {
        return Err(AnalysisError::IncompleteHistory {
            needed: t + 1,
            available: history.len(),
        });
    }
    let mut r_t = p0_invs.iter().map(lambda_max).fold(f64::NEG_INFINITY, f64::max);
    let mut info = DMatrix::zeros(m, m);
    for p in p0_invs {
        info += p;
    }
    let cutoff = (t + 1).checked_sub(topology.diameter());
    for (k, phis) in history[..=t].iter().enumerate() {
        for phi in phis {
            r_t += phi.norm_squared();
            if cutoff.is_some_and(|c| k <= c) {
                info += phi * phi.transpose();
            }
        }
    }
    Ok(ExcitationStats {
        r_t,
        lambda_min_coop: lambda_min(&info),
    })
}

/// `V = Σ_i (θ - θ_i)^T P_i^{-1} (θ - θ_i)`.
pub fn lyapunov_value(states: &[NodeState], theta_true: &DVector<f64>) -> Result<f64, AnalysisError> {
    if let Some(s) = states.iter().find(|s| s.dim() != theta_true.len()) {
        return Err(AnalysisError::DimensionMismatch {
            expected: theta_true.len(),
            found: s.dim(),
        });
    }
    Ok(states.iter().map(|s| s.weighted_error(theta_true)).sum())
}

/// Inputs for [`bound_constants`]. Expectations are Monte-Carlo means over runs.
#[derive(Debug, Clone)]
pub struct BoundInputs {
    pub m: usize,
    pub n: usize,
    /// `σ_i²` per node, if known.
    pub noise_variances: Option<Vec<f64>>,
    /// Explicit `σ̄`; defaults to `σ_w` when absent.
    pub sigma_bar: Option<f64>,
    /// Bound on `‖Φ^T P Φ‖`, configured or the empirical maximum.
    pub c: f64,
    /// Mean of `Θ̃_0^T P_0^{-1} Θ̃_0`.
    pub mean_initial_lyapunov: f64,
    /// Mean of `log|P_0^{-1}|`.
    pub mean_initial_logdet: f64,
}

/// Constants of `Σ_i Σ_k E[R_{k,i}] ≤ a log(E[r_t]) + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundConstants {
    pub sigma_w: f64,
    pub sigma_bar: f64,
    pub c: f64,
    pub a: f64,
    pub b: f64,
}

impl BoundConstants {
    pub fn bound(&self, mean_r_t: f64) -> f64 {
        self.a * mean_r_t.ln() + self.b
    }
}

pub fn bound_constants(inputs: &BoundInputs) -> Result<BoundConstants, AnalysisError> {
    let sigma_w = inputs.noise_variances.as_ref().map(|v| v.iter().sum::<f64>());
    let sigma_bar = match (inputs.sigma_bar, sigma_w) {
        (Some(s), Some(w)) if s < w => return Err(AnalysisError::MissingVarianceBound),
        (Some(s), _) => s,
        (None, Some(w)) => w,
        (None, None) => return Err(AnalysisError::MissingVarianceBound),
    };
    if !(sigma_bar > 0.0) {
        return Err(AnalysisError::MissingVarianceBound);
    }
    let c = inputs.c;
    Ok(BoundConstants {
        sigma_w: sigma_w.unwrap_or(sigma_bar),
        sigma_bar,
        c,
        a: (1.0 + c) * (inputs.m * inputs.n) as f64 * sigma_bar,
        b: (1.0 + c) * (inputs.mean_initial_lyapunov - sigma_bar * inputs.mean_initial_logdet),
    })
}
