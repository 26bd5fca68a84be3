//! Diffusion least squares: a local recursive LS *adapt* step at every node followed by a
//! covariance-intersection *combine* step over each node's neighbourhood.
//!
//! Every node keeps both its covariance `P` and its information matrix `P^{-1}`. Adapt
//! downdates `P` with the rank-one gain and adds `φφ^T` to `P^{-1}`; combine sums
//! information matrices and inverts once through a Cholesky factor.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::graph::NetworkTopology;
use crate::model::Observation;
use crate::toolkit::{
    cholesky_checked, inverse_spd, logdet_from_factor, rcond_from_factor, symmetrize, ToolkitError,
    RCOND_THRESHOLD,
};

/// Tolerance on the sum of the weights handed to [`combine`].
pub const WEIGHT_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("non-finite regressor or measurement")]
    NonFiniteInput,
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("combine weights must be positive and sum to 1 (sum {sum})")]
    WeightSumInvalid { sum: f64 },
    #[error("combined information matrix is singular (rcond {rcond:e})")]
    SingularCombinedInformation { rcond: f64 },
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("normal equations are singular")]
    SingularNormalEquations,
}

impl From<ToolkitError> for EstimatorError {
    fn from(e: ToolkitError) -> Self {
        match e {
            ToolkitError::DimensionMismatch { expected, found } => EstimatorError::DimensionMismatch {
                what: "matrix",
                expected,
                found,
            },
            _ => EstimatorError::NotPositiveDefinite,
        }
    }
}

/// Estimate `θ_{k,i}` with covariance `P_{k,i}` and cached information `P_{k,i}^{-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    theta: DVector<f64>,
    p: DMatrix<f64>,
    p_inv: DMatrix<f64>,
}

impl NodeState {
    /// Starts from `theta0` with covariance `p0`.
    pub fn new(theta0: DVector<f64>, p0: DMatrix<f64>) -> Result<Self, EstimatorError> {
        if p0.shape() != (theta0.len(), theta0.len()) {
            return Err(EstimatorError::DimensionMismatch {
                what: "initial covariance",
                expected: theta0.len(),
                found: p0.nrows(),
            });
        }
        let mut p = p0;
        symmetrize(&mut p);
        let p_inv = inverse_spd(&p)?;
        Ok(Self { theta: theta0, p, p_inv })
    }

    /// `θ_0 = 0`, `P_0 = alpha0 · I_m`.
    pub fn isotropic(m: usize, alpha0: f64) -> Self {
        Self {
            theta: DVector::zeros(m),
            p: DMatrix::identity(m, m) * alpha0,
            p_inv: DMatrix::identity(m, m) / alpha0,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn p_inv(&self) -> &DMatrix<f64> {
        &self.p_inv
    }

    /// `log|P^{-1}|`.
    pub fn logdet_information(&self) -> Result<f64, EstimatorError> {
        let (chol, _) = cholesky_checked(&self.p_inv)?;
        Ok(logdet_from_factor(&chol))
    }

    /// `(θ - θ_est)^T P^{-1} (θ - θ_est)`.
    pub fn weighted_error(&self, theta_true: &DVector<f64>) -> f64 {
        let e = theta_true - &self.theta;
        (e.transpose() * &self.p_inv * &e)[(0, 0)]
    }
}

/// Result of the local adapt step at one node.
#[derive(Debug, Clone, PartialEq)]
pub struct AdaptOutput {
    /// `θ̄_{k+1,i}`.
    pub theta_bar: DVector<f64>,
    /// `P̄_{k+1,i}`, by rank-one downdate.
    pub pbar: DMatrix<f64>,
    /// `P̄_{k+1,i}^{-1} = P_{k,i}^{-1} + φφ^T`.
    pub pbar_inv: DMatrix<f64>,
    /// `b_{k,i} = 1 / (1 + φ^T P φ)`.
    pub gain: f64,
    /// `φ^T P φ` as used for the gain.
    pub phi_p_phi: f64,
}

impl AdaptOutput {
    fn into_state(self) -> NodeState {
        NodeState {
            theta: self.theta_bar,
            p: self.pbar,
            p_inv: self.pbar_inv,
        }
    }
}

fn check_regressor(state: &NodeState, phi: &DVector<f64>, y: f64) -> Result<(), EstimatorError> {
    if phi.len() != state.dim() {
        return Err(EstimatorError::DimensionMismatch {
            what: "regressor",
            expected: state.dim(),
            found: phi.len(),
        });
    }
    if !y.is_finite() || phi.iter().any(|v| !v.is_finite()) {
        return Err(EstimatorError::NonFiniteInput);
    }
    Ok(())
}

/// `φ^T P φ` evaluated as `‖L^{-1} φ‖²` with `P^{-1} = L L^T`, so it is never negative.
fn quadratic_form(state: &NodeState, phi: &DVector<f64>) -> Result<f64, EstimatorError> {
    let (chol, _) = cholesky_checked(&state.p_inv)?;
    let z = chol
        .l_dirty()
        .solve_lower_triangular(phi)
        .ok_or(EstimatorError::NotPositiveDefinite)?;
    Ok(z.norm_squared())
}

/// Local recursive LS update on `(φ_{k,i}, y_{k+1,i})`.
pub fn adapt(state: &NodeState, phi: &DVector<f64>, y: f64) -> Result<AdaptOutput, EstimatorError> {
    check_regressor(state, phi, y)?;
    let q = quadratic_form(state, phi)?;
    let gain = 1.0 / (1.0 + q);
    let p_phi = &state.p * phi;
    let innovation = y - phi.dot(&state.theta);
    let theta_bar = &state.theta + &p_phi * (gain * innovation);
    let mut pbar = &state.p - &p_phi * p_phi.transpose() * gain;
    symmetrize(&mut pbar);
    let mut pbar_inv = &state.p_inv + phi * phi.transpose();
    symmetrize(&mut pbar_inv);
    Ok(AdaptOutput {
        theta_bar,
        pbar,
        pbar_inv,
        gain,
        phi_p_phi: q,
    })
}

fn check_weights(weights: &[f64]) -> Result<(), EstimatorError> {
    let sum: f64 = weights.iter().sum();
    if weights.is_empty() || weights.iter().any(|&a| !(a > 0.0)) || (sum - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(EstimatorError::WeightSumInvalid { sum });
    }
    Ok(())
}

/// Covariance-intersection fusion of `(θ_j, Q_j)` pairs, `Q_j` being information matrices:
/// `P^{-1} = Σ a_j Q_j`, `θ = P Σ a_j Q_j θ_j`.
fn fuse<'a>(
    items: impl Iterator<Item = (&'a DVector<f64>, &'a DMatrix<f64>)>,
    weights: &[f64],
) -> Result<NodeState, EstimatorError> {
    let mut info: Option<DMatrix<f64>> = None;
    let mut moment: Option<DVector<f64>> = None;
    for ((theta, q), &a) in items.zip(weights) {
        let wq = q * a;
        let wm = &wq * theta;
        match (&mut info, &mut moment) {
            (Some(i), Some(mo)) => {
                if wq.shape() != i.shape() {
                    return Err(EstimatorError::DimensionMismatch {
                        what: "neighbour information",
                        expected: i.nrows(),
                        found: wq.nrows(),
                    });
                }
                *i += wq;
                *mo += wm;
            }
            _ => {
                info = Some(wq);
                moment = Some(wm);
            }
        }
    }
    let mut p_inv = info.ok_or(EstimatorError::WeightSumInvalid { sum: 0.0 })?;
    let moment = moment.expect("set together with info");
    symmetrize(&mut p_inv);
    let chol: Cholesky<f64, Dyn> = match cholesky_checked(&p_inv) {
        Ok((c, rcond)) if rcond >= RCOND_THRESHOLD => c,
        Ok((_, rcond)) => return Err(EstimatorError::SingularCombinedInformation { rcond }),
        Err(_) => return Err(EstimatorError::SingularCombinedInformation { rcond: 0.0 }),
    };
    debug_assert!(rcond_from_factor(&chol) >= RCOND_THRESHOLD);
    let mut p = chol.inverse();
    symmetrize(&mut p);
    let theta = chol.solve(&moment);
    Ok(NodeState { theta, p, p_inv })
}

/// Combine step at one node from its neighbours' adapt outputs and weights `a_ji`.
///
/// A single neighbour with weight exactly 1 returns that neighbour's adapt output
/// unchanged, so `A = I` reproduces the classical recursion bit for bit.
pub fn combine(outputs: &[&AdaptOutput], weights: &[f64]) -> Result<NodeState, EstimatorError> {
    if outputs.len() != weights.len() {
        return Err(EstimatorError::DimensionMismatch {
            what: "combine weights",
            expected: outputs.len(),
            found: weights.len(),
        });
    }
    check_weights(weights)?;
    if outputs.len() == 1 && weights[0] == 1.0 {
        return Ok(outputs[0].clone().into_state());
    }
    fuse(outputs.iter().map(|o| (&o.theta_bar, &o.pbar_inv)), weights)
}

fn combine_states(states: &[&NodeState], weights: &[f64]) -> Result<NodeState, EstimatorError> {
    check_weights(weights)?;
    if states.len() == 1 && weights[0] == 1.0 {
        return Ok(states[0].clone());
    }
    fuse(states.iter().map(|s| (&s.theta, &s.p_inv)), weights)
}

fn neighbourhood(topology: &NetworkTopology, i: usize) -> (Vec<usize>, Vec<f64>) {
    let nbrs: Vec<usize> = (0..topology.n()).filter(|&j| topology.weight(j, i) > 0.0).collect();
    let w = nbrs.iter().map(|&j| topology.weight(j, i)).collect();
    (nbrs, w)
}

/// Combine step for node `i` over `j ∈ N_i`, reading only the phase-one outputs.
pub fn combine_node(
    topology: &NetworkTopology,
    adapted: &[AdaptOutput],
    i: usize,
) -> Result<NodeState, EstimatorError> {
    let (nbrs, w) = neighbourhood(topology, i);
    let outs: Vec<&AdaptOutput> = nbrs.iter().map(|&j| &adapted[j]).collect();
    combine(&outs, &w)
}

/// Full network step: adapt everywhere, then combine everywhere from the snapshot.
#[derive(Debug, Clone)]
pub struct NetworkStep {
    pub states: Vec<NodeState>,
    pub adapted: Vec<AdaptOutput>,
}

/// One iteration of the distributed algorithm. `combine_rounds > 1` repeats the
/// exchange on the already combined `(θ, P^{-1})` pairs with the same weights.
pub fn step_network(
    states: &[NodeState],
    obs: &Observation,
    topology: &NetworkTopology,
    combine_rounds: usize,
) -> Result<NetworkStep, EstimatorError> {
    let n = topology.n();
    if states.len() != n || obs.n() != n {
        return Err(EstimatorError::DimensionMismatch {
            what: "network size",
            expected: n,
            found: if states.len() != n { states.len() } else { obs.n() },
        });
    }
    let adapted = states
        .iter()
        .zip(obs.phi.iter().zip(&obs.y))
        .map(|(s, (phi, &y))| adapt(s, phi, y))
        .collect::<Result<Vec<_>, _>>()?;
    let mut next = (0..n)
        .map(|i| combine_node(topology, &adapted, i))
        .collect::<Result<Vec<_>, _>>()?;
    for _ in 1..combine_rounds.max(1) {
        next = (0..n)
            .map(|i| {
                let (nbrs, w) = neighbourhood(topology, i);
                let refs: Vec<&NodeState> = nbrs.iter().map(|&j| &next[j]).collect();
                combine_states(&refs, &w)
            })
            .collect::<Result<Vec<_>, _>>()?;
    }
    Ok(NetworkStep { states: next, adapted })
}

/// Classical recursive LS at every node on its own data, no exchange.
pub fn classical_step(states: &[NodeState], obs: &Observation) -> Result<NetworkStep, EstimatorError> {
    if states.len() != obs.n() {
        return Err(EstimatorError::DimensionMismatch {
            what: "network size",
            expected: states.len(),
            found: obs.n(),
        });
    }
    let adapted = states
        .iter()
        .zip(obs.phi.iter().zip(&obs.y))
        .map(|(s, (phi, &y))| adapt(s, phi, y))
        .collect::<Result<Vec<_>, _>>()?;
    let states = adapted.iter().cloned().map(AdaptOutput::into_state).collect();
    Ok(NetworkStep { states, adapted })
}

/// Fusion-centre LS over all nodes' raw data.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedState {
    theta: DVector<f64>,
    p: DMatrix<f64>,
}

impl CentralizedState {
    pub fn new(theta0: DVector<f64>, p0: DMatrix<f64>) -> Result<Self, EstimatorError> {
        let mut p = p0;
        symmetrize(&mut p);
        cholesky_checked(&p)?;
        Ok(Self { theta: theta0, p })
    }

    pub fn isotropic(m: usize, alpha0: f64) -> Self {
        Self {
            theta: DVector::zeros(m),
            p: DMatrix::identity(m, m) * alpha0,
        }
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn p(&self) -> &DMatrix<f64> {
        &self.p
    }

    /// `log|P^{-1}| = -log|P|`.
    pub fn logdet_information(&self) -> Result<f64, EstimatorError> {
        let (chol, _) = cholesky_checked(&self.p)?;
        Ok(-logdet_from_factor(&chol))
    }

    pub fn weighted_error(&self, theta_true: &DVector<f64>) -> Result<f64, EstimatorError> {
        let e = theta_true - &self.theta;
        let (chol, _) = cholesky_checked(&self.p)?;
        Ok(e.dot(&chol.solve(&e)))
    }

    /// `λ_max(Φ^T P Φ)` for the stacked regressors of `obs`.
    pub fn phi_p_phi_norm(&self, obs: &Observation) -> f64 {
        let phi = stack_columns(&obs.phi, self.theta.len());
        let g = phi.transpose() * &self.p * &phi;
        crate::toolkit::lambda_max(&g)
    }
}

fn stack_columns(cols: &[DVector<f64>], m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(m, cols.len(), |r, c| cols[c][r])
}

/// `θ_{k+1} = θ_k + P Φ B [Y - Φ^T θ_k]`, `P_{k+1} = P - P Φ B Φ^T P`,
/// `B = (I_n + Φ^T P Φ)^{-1}`, with `Φ` the `m x n` matrix of all regressors.
pub fn centralized_step(state: &CentralizedState, obs: &Observation) -> Result<CentralizedState, EstimatorError> {
    let m = state.theta.len();
    if let Some(p) = obs.phi.iter().find(|p| p.len() != m) {
        return Err(EstimatorError::DimensionMismatch {
            what: "regressor",
            expected: m,
            found: p.len(),
        });
    }
    if obs.y.iter().any(|v| !v.is_finite()) || obs.phi.iter().flatten().any(|v| !v.is_finite()) {
        return Err(EstimatorError::NonFiniteInput);
    }
    let n = obs.n();
    let phi = stack_columns(&obs.phi, m);
    let p_phi = &state.p * &phi;
    let mut inner = DMatrix::identity(n, n) + phi.transpose() * &p_phi;
    symmetrize(&mut inner);
    let (chol, _) = cholesky_checked(&inner)?;
    let y = DVector::from_column_slice(&obs.y);
    let innovation = y - phi.transpose() * &state.theta;
    let theta = &state.theta + &p_phi * chol.solve(&innovation);
    let mut p = &state.p - &p_phi * chol.solve(&p_phi.transpose());
    symmetrize(&mut p);
    Ok(CentralizedState { theta, p })
}

/// Regularized batch LS: minimizes `Σ (y_j - φ_j^T θ)² + (θ - θ_0)^T P_0^{-1} (θ - θ_0)`
/// through a Cholesky solve of the normal equations.
pub fn batch_ls(
    samples: &[(DVector<f64>, f64)],
    theta0: &DVector<f64>,
    p0_inv: &DMatrix<f64>,
) -> Result<DVector<f64>, EstimatorError> {
    let m = theta0.len();
    let mut normal = p0_inv.clone();
    let mut rhs = p0_inv * theta0;
    for (phi, y) in samples {
        if phi.len() != m {
            return Err(EstimatorError::DimensionMismatch {
                what: "regressor",
                expected: m,
                found: phi.len(),
            });
        }
        normal += phi * phi.transpose();
        rhs += phi * *y;
    }
    symmetrize(&mut normal);
    let chol = Cholesky::new(normal).ok_or(EstimatorError::SingularNormalEquations)?;
    Ok(chol.solve(&rhs))
}

/// Residual of the stacked error recursion
/// `Θ̃_{k+1} = P_{k+1} 𝒜 P_k^{-1} Θ̃_k - P_{k+1} 𝒜 P̄_{k+1}^{-1} c_k P_k Φ_k W_{k+1}`,
/// evaluated with dense `mn x mn` block matrices. Returns `(‖residual‖, ‖Θ̃_k‖)`.
///
/// Valid for a single combine round.
pub fn error_recursion_residual(
    topology: &NetworkTopology,
    theta_true: &DVector<f64>,
    before: &[NodeState],
    step: &NetworkStep,
    obs: &Observation,
) -> (f64, f64) {
    use crate::toolkit::{block_diag, kron_identity};
    let n = topology.n();
    let m = theta_true.len();
    let stack = |vs: &mut dyn Iterator<Item = DVector<f64>>| {
        let v: Vec<f64> = vs.flat_map(|x| x.iter().copied().collect::<Vec<_>>()).collect();
        DVector::from_vec(v)
    };
    let err_k = stack(&mut before.iter().map(|s| theta_true - &s.theta));
    let err_next = stack(&mut step.states.iter().map(|s| theta_true - &s.theta));

    let big_a = kron_identity(topology.weights(), m);
    let p_next = block_diag(&step.states.iter().map(|s| s.p.clone()).collect::<Vec<_>>());
    let p_k_inv = block_diag(&before.iter().map(|s| s.p_inv.clone()).collect::<Vec<_>>());
    let p_k = block_diag(&before.iter().map(|s| s.p.clone()).collect::<Vec<_>>());
    let pbar_inv = block_diag(&step.adapted.iter().map(|a| a.pbar_inv.clone()).collect::<Vec<_>>());
    let c_k = DMatrix::from_diagonal(&DVector::from_fn(m * n, |r, _| step.adapted[r / m].gain));
    let mut big_phi = DMatrix::zeros(m * n, n);
    for i in 0..n {
        big_phi.view_mut((i * m, i), (m, 1)).copy_from(&obs.phi[i]);
    }
    let w = DVector::from_column_slice(&obs.w);

    let predicted = &p_next * &big_a * &p_k_inv * &err_k
        - &p_next * &big_a * &pbar_inv * &c_k * &p_k * &big_phi * &w;
    ((err_next - predicted).norm(), err_k.norm())
}
