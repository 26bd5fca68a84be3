//! Observation process `y_{k+1,i} = φ_{k,i}^T θ + w_{k+1,i}`.
//!
//! Randomness is drawn from counter-based substreams: node `i` at step `k` owns the
//! ChaCha8 stream keyed by `(seed, i)` at stream position `k`. Adding nodes or steps
//! never perturbs the draws of existing ones, and any step can be regenerated from
//! the seed alone.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{three_node_weights, NetworkTopology};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("invalid noise specification: {0}")]
    InvalidNoise(String),
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("replay stream has no row for step {k}, node {node}")]
    ReplayExhausted { k: usize, node: usize },
    #[error("replay file: {0}")]
    Replay(String),
}

/// The unknown parameter vector `θ`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueParameter(DVector<f64>);

impl TrueParameter {
    pub fn new(values: Vec<f64>) -> Result<Self, ModelError> {
        if values.is_empty() {
            return Err(ModelError::InvalidScenario("theta must have at least one entry".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::InvalidScenario("theta has non-finite entries".into()));
        }
        Ok(Self(DVector::from_vec(values)))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }
}

/// Noise law shared by every node.
///
/// All three families have zero mean and finite moments beyond the second, so the
/// noise is a martingale difference with a time-invariant conditional variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// `N(0, variance)`; `variance = 0` is the noiseless model.
    Gaussian { variance: f64 },
    /// `U(-half_width, half_width)`.
    Uniform { half_width: f64 },
    /// `scale · t_dof`, requires `dof > 2`.
    ScaledStudentT { dof: f64, scale: f64 },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = match *self {
            NoiseSpec::Gaussian { variance } => variance.is_finite() && variance >= 0.0,
            NoiseSpec::Uniform { half_width } => half_width.is_finite() && half_width > 0.0,
            NoiseSpec::ScaledStudentT { dof, scale } => {
                if !(dof.is_finite() && dof > 2.0) {
                    return Err(ModelError::InvalidNoise(format!(
                        "student-t needs dof > 2 for a finite variance, got {dof}"
                    )));
                }
                scale.is_finite() && scale > 0.0
            }
        };
        if ok {
            Ok(())
        } else {
            Err(ModelError::InvalidNoise(format!("{self:?}")))
        }
    }

    /// `σ_i² = E[w²]`.
    pub fn variance(&self) -> f64 {
        match *self {
            NoiseSpec::Gaussian { variance } => variance,
            NoiseSpec::Uniform { half_width } => half_width * half_width / 3.0,
            NoiseSpec::ScaledStudentT { dof, scale } => scale * scale * dof / (dof - 2.0),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            NoiseSpec::Gaussian { variance } => {
                let z: f64 = rng.sample(StandardNormal);
                if variance == 0.0 {
                    0.0
                } else {
                    variance.sqrt() * z
                }
            }
            NoiseSpec::Uniform { half_width } => rng.random_range(-half_width..half_width),
            NoiseSpec::ScaledStudentT { dof, scale } => {
                // validated dof > 2, so construction cannot fail
                let t = StudentT::new(dof).expect("validated dof");
                scale * t.sample(rng)
            }
        }
    }
}

/// Input coupling of the cooperative ARX model: node `i` sees the inputs of the nodes
/// listed in `inputs[i]`. The parameter is `θ = [a, b-block of node 0, b-block of node 1, ...]`
/// and `φ_{k,i}` carries `y_{k,i}` first, then `u_{k,j}` for `j ∈ inputs[i]` in the
/// coordinates of node `i`'s block, zeros elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArxLayout {
    pub inputs: Vec<Vec<usize>>,
    /// Standard deviation of the i.i.d. gaussian inputs `u_{k,j}`.
    #[serde(default = "one")]
    pub input_std: f64,
}

fn one() -> f64 {
    1.0
}

impl ArxLayout {
    pub fn param_dim(&self) -> usize {
        1 + self.inputs.iter().map(Vec::len).sum::<usize>()
    }

    /// Offset of node `i`'s input block inside `θ`.
    fn block_offset(&self, node: usize) -> usize {
        1 + self.inputs[..node].iter().map(Vec::len).sum::<usize>()
    }

    /// Coordinates of `φ_{k,i}` that are identically zero.
    pub fn structural_zeros(&self, node: usize) -> Vec<usize> {
        let start = self.block_offset(node);
        let end = start + self.inputs[node].len();
        (1..self.param_dim()).filter(|c| *c < start || *c >= end).collect()
    }
}

/// Pre-recorded `(φ, y)` rows, indexed by step then node.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayStream {
    rows: Arc<Vec<Vec<Option<(Vec<f64>, f64)>>>>,
    n: usize,
    m: usize,
}

impl ReplayStream {
    /// Reads a CSV with header `k,i,phi_0,...,phi_{m-1},y`.
    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path.as_ref())
            .map_err(|e| ModelError::Replay(e.to_string()))?;
        let headers = reader.headers().map_err(|e| ModelError::Replay(e.to_string()))?.clone();
        let cols = headers.len();
        if cols < 4 || &headers[0] != "k" || &headers[1] != "i" || &headers[cols - 1] != "y" {
            return Err(ModelError::Replay(
                "header must be k,i,phi_0,...,phi_{m-1},y".into(),
            ));
        }
        for (c, name) in headers.iter().enumerate().take(cols - 1).skip(2) {
            if name != format!("phi_{}", c - 2) {
                return Err(ModelError::Replay(format!("unexpected column {name:?}")));
            }
        }
        let m = cols - 3;
        let mut by_step: BTreeMap<usize, BTreeMap<usize, (Vec<f64>, f64)>> = BTreeMap::new();
        let mut n = 0;
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| ModelError::Replay(e.to_string()))?;
            let parse_idx = |s: &str| {
                s.parse::<usize>()
                    .map_err(|e| ModelError::Replay(format!("row {}: {e}", line + 2)))
            };
            let parse_val = |s: &str| {
                s.parse::<f64>()
                    .map_err(|e| ModelError::Replay(format!("row {}: {e}", line + 2)))
            };
            let k = parse_idx(&record[0])?;
            let i = parse_idx(&record[1])?;
            let phi = (2..2 + m).map(|c| parse_val(&record[c])).collect::<Result<Vec<_>, _>>()?;
            let y = parse_val(&record[cols - 1])?;
            n = n.max(i + 1);
            by_step.entry(k).or_default().insert(i, (phi, y));
        }
        let steps = by_step.keys().next_back().map_or(0, |k| k + 1);
        let mut rows = vec![vec![None; n]; steps];
        for (k, nodes) in by_step {
            for (i, row) in nodes {
                rows[k][i] = Some(row);
            }
        }
        Ok(Self {
            rows: Arc::new(rows),
            n,
            m,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn nodes(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.m
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum RegressorKind {
    /// `φ_{k,i} ~ N(0, covariance)` i.i.d., with optional per-node masks zeroing coordinates.
    IidGaussian {
        covariance: DMatrix<f64>,
        masks: Option<Vec<Vec<bool>>>,
    },
    ArxCooperative(ArxLayout),
    Replayed(ReplayStream),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub theta: TrueParameter,
    pub regressors: RegressorKind,
    pub noise: NoiseSpec,
    pub n: usize,
}

impl Scenario {
    pub fn new(
        theta: TrueParameter,
        regressors: RegressorKind,
        noise: NoiseSpec,
        n: usize,
    ) -> Result<Self, ModelError> {
        let s = Self {
            theta,
            regressors,
            noise,
            n,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn m(&self) -> usize {
        self.theta.dim()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.noise.validate()?;
        let (n, m) = (self.n, self.m());
        if n == 0 {
            return Err(ModelError::InvalidScenario("scenario needs at least one node".into()));
        }
        match &self.regressors {
            RegressorKind::IidGaussian { covariance, masks } => {
                if covariance.shape() != (m, m) {
                    return Err(ModelError::DimensionMismatch {
                        what: "regressor covariance",
                        expected: m,
                        found: covariance.nrows(),
                    });
                }
                if nalgebra::Cholesky::new(covariance.clone()).is_none() {
                    return Err(ModelError::InvalidScenario(
                        "regressor covariance must be positive definite".into(),
                    ));
                }
                if let Some(masks) = masks {
                    if masks.len() != n {
                        return Err(ModelError::DimensionMismatch {
                            what: "regressor masks (nodes)",
                            expected: n,
                            found: masks.len(),
                        });
                    }
                    if let Some(bad) = masks.iter().find(|mk| mk.len() != m) {
                        return Err(ModelError::DimensionMismatch {
                            what: "regressor mask",
                            expected: m,
                            found: bad.len(),
                        });
                    }
                }
            }
            RegressorKind::ArxCooperative(layout) => {
                if layout.inputs.len() != n {
                    return Err(ModelError::DimensionMismatch {
                        what: "arx input layout (nodes)",
                        expected: n,
                        found: layout.inputs.len(),
                    });
                }
                if layout.param_dim() != m {
                    return Err(ModelError::DimensionMismatch {
                        what: "arx parameter layout",
                        expected: layout.param_dim(),
                        found: m,
                    });
                }
                if layout.inputs.iter().flatten().any(|&j| j >= n) {
                    return Err(ModelError::InvalidScenario("arx input index out of range".into()));
                }
                if !(layout.input_std.is_finite() && layout.input_std >= 0.0) {
                    return Err(ModelError::InvalidScenario("arx input_std must be >= 0".into()));
                }
            }
            RegressorKind::Replayed(stream) => {
                if stream.dim() != m {
                    return Err(ModelError::DimensionMismatch {
                        what: "replay regressor width",
                        expected: m,
                        found: stream.dim(),
                    });
                }
                if stream.nodes() != n {
                    return Err(ModelError::DimensionMismatch {
                        what: "replay node count",
                        expected: n,
                        found: stream.nodes(),
                    });
                }
            }
        }
        Ok(())
    }

    /// `σ_i²` for every node.
    pub fn noise_variances(&self) -> Vec<f64> {
        vec![self.noise.variance(); self.n]
    }
}

/// Mutable state of the observation process for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorState {
    seed: u64,
    k: usize,
    /// `y_{k,i}`; starts at zero.
    y_prev: Vec<f64>,
    chol: Option<DMatrix<f64>>,
}

impl GeneratorState {
    pub fn new(scenario: &Scenario, seed: u64) -> Self {
        let chol = match &scenario.regressors {
            RegressorKind::IidGaussian { covariance, .. } => {
                nalgebra::Cholesky::new(covariance.clone()).map(|c| c.l())
            }
            _ => None,
        };
        Self {
            seed,
            k: 0,
            y_prev: vec![0.0; scenario.n],
            chol,
        }
    }

    pub fn k(&self) -> usize {
        self.k
    }
}

/// One step of the observation process.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    /// `φ_{k,i}` per node.
    pub phi: Vec<DVector<f64>>,
    /// `y_{k+1,i}` per node.
    pub y: Vec<f64>,
    /// `w_{k+1,i}` per node, retained for diagnostics.
    pub w: Vec<f64>,
}

impl Observation {
    pub fn n(&self) -> usize {
        self.y.len()
    }

    /// Builds an observation from explicit regressors, noises and `θ`.
    pub fn from_parts(theta: &DVector<f64>, phi: Vec<DVector<f64>>, w: Vec<f64>) -> Result<Self, ModelError> {
        if phi.len() != w.len() {
            return Err(ModelError::DimensionMismatch {
                what: "noise vector",
                expected: phi.len(),
                found: w.len(),
            });
        }
        if let Some(p) = phi.iter().find(|p| p.len() != theta.len()) {
            return Err(ModelError::DimensionMismatch {
                what: "regressor",
                expected: theta.len(),
                found: p.len(),
            });
        }
        let y = phi.iter().zip(&w).map(|(p, wi)| p.dot(theta) + wi).collect();
        Ok(Self { phi, y, w })
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Substream for `node` at step `k` under `seed`.
pub fn substream(seed: u64, node: usize, k: usize) -> ChaCha8Rng {
    let mut state = seed ^ (node as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(k as u64);
    rng
}

/// Produces `(φ_{k,i}, y_{k+1,i}, w_{k+1,i})` for every node and advances the state.
pub fn generate_step(scenario: &Scenario, state: &mut GeneratorState) -> Result<Observation, ModelError> {
    let (n, m, k) = (scenario.n, scenario.m(), state.k);
    if state.y_prev.len() != n {
        return Err(ModelError::DimensionMismatch {
            what: "generator state",
            expected: n,
            found: state.y_prev.len(),
        });
    }
    let theta = scenario.theta.as_vector();
    let mut rngs: Vec<ChaCha8Rng> = (0..n).map(|i| substream(state.seed, i, k)).collect();

    let obs = match &scenario.regressors {
        RegressorKind::IidGaussian { masks, .. } => {
            let l = state.chol.as_ref().ok_or(ModelError::InvalidScenario(
                "generator state was built for a different scenario".into(),
            ))?;
            let mut phi = Vec::with_capacity(n);
            let mut w = Vec::with_capacity(n);
            for (i, rng) in rngs.iter_mut().enumerate() {
                let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
                let mut p = l * z;
                if let Some(masks) = masks {
                    for (c, keep) in masks[i].iter().enumerate() {
                        if !keep {
                            p[c] = 0.0;
                        }
                    }
                }
                phi.push(p);
                w.push(scenario.noise.sample(rng));
            }
            Observation::from_parts(theta, phi, w)?
        }
        RegressorKind::ArxCooperative(layout) => {
            let u: Vec<f64> = rngs
                .iter_mut()
                .map(|rng| {
                    let z: f64 = rng.sample(StandardNormal);
                    layout.input_std * z
                })
                .collect();
            let w: Vec<f64> = rngs.iter_mut().map(|rng| scenario.noise.sample(rng)).collect();
            let phi = (0..n)
                .map(|i| {
                    let mut p = DVector::zeros(m);
                    p[0] = state.y_prev[i];
                    let off = layout.block_offset(i);
                    for (slot, &j) in layout.inputs[i].iter().enumerate() {
                        p[off + slot] = u[j];
                    }
                    p
                })
                .collect();
            Observation::from_parts(theta, phi, w)?
        }
        RegressorKind::Replayed(stream) => {
            let mut phi = Vec::with_capacity(n);
            let mut y = Vec::with_capacity(n);
            let mut w = Vec::with_capacity(n);
            for i in 0..n {
                let (p, yi) = stream
                    .rows
                    .get(k)
                    .and_then(|r| r[i].as_ref())
                    .ok_or(ModelError::ReplayExhausted { k, node: i })?;
                let p = DVector::from_column_slice(p);
                w.push(yi - p.dot(theta));
                y.push(*yi);
                phi.push(p);
            }
            Observation { phi, y, w }
        }
    };
    state.y_prev.clone_from(&obs.y);
    state.k += 1;
    Ok(obs)
}

/// The cooperative three-node ARX scenario: every node sees only part of the inputs,
/// so no single node can identify `θ`, while the network jointly can.
pub fn arx_cooperative_scenario() -> Scenario {
    let theta = TrueParameter::new(vec![0.2, 0.5, 0.3, 0.2, 0.1, 1.2, 0.6, 1.5]).expect("finite");
    let layout = ArxLayout {
        inputs: vec![vec![0, 1], vec![0, 1, 2], vec![1, 2]],
        input_std: 1.0,
    };
    Scenario::new(
        theta,
        RegressorKind::ArxCooperative(layout),
        NoiseSpec::Gaussian { variance: 0.1 },
        3,
    )
    .expect("built-in scenario is valid")
}

pub fn arx_cooperative_topology() -> NetworkTopology {
    NetworkTopology::from_rows(&three_node_weights()).expect("built-in topology is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn iid(n: usize, m: usize, noise: NoiseSpec) -> Scenario {
        Scenario::new(
            TrueParameter::new((0..m).map(|j| j as f64 - 1.0).collect()).unwrap(),
            RegressorKind::IidGaussian {
                covariance: DMatrix::identity(m, m),
                masks: None,
            },
            noise,
            n,
        )
        .unwrap()
    }

    #[test]
    fn noiseless_measurements_are_exact() {
        let s = iid(3, 4, NoiseSpec::Gaussian { variance: 0.0 });
        let mut st = GeneratorState::new(&s, 1);
        for _ in 0..5 {
            let obs = generate_step(&s, &mut st).unwrap();
            for i in 0..3 {
                assert_eq!(obs.w[i], 0.0);
                assert_eq!(obs.y[i], obs.phi[i].dot(s.theta.as_vector()));
            }
        }
    }

    #[test]
    fn arx_parameter_and_layout() {
        let s = arx_cooperative_scenario();
        assert_eq!(
            s.theta.as_vector().as_slice(),
            &[0.2, 0.5, 0.3, 0.2, 0.1, 1.2, 0.6, 1.5]
        );
        let mut st = GeneratorState::new(&s, 42);
        let first = generate_step(&s, &mut st).unwrap();
        // y_{0,i} = 0
        assert!(first.phi.iter().all(|p| p[0] == 0.0));
        let obs = generate_step(&s, &mut st).unwrap();
        let u1 = obs.phi[0][1];
        let u2 = obs.phi[0][2];
        assert_eq!(obs.phi[0].as_slice(), &[first.y[0], u1, u2, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let u3 = obs.phi[1][5];
        assert_eq!(obs.phi[1].as_slice(), &[first.y[1], 0.0, 0.0, u1, u2, u3, 0.0, 0.0]);
        assert_eq!(obs.phi[2].as_slice(), &[first.y[2], 0.0, 0.0, 0.0, 0.0, 0.0, u2, u3]);
    }

    #[test]
    fn arx_structural_zeros_stay_zero() {
        let s = arx_cooperative_scenario();
        let RegressorKind::ArxCooperative(layout) = &s.regressors else {
            unreachable!()
        };
        assert_eq!(layout.structural_zeros(0), vec![3, 4, 5, 6, 7]);
        assert_eq!(layout.structural_zeros(2), vec![1, 2, 3, 4, 5]);
        let mut st = GeneratorState::new(&s, 7);
        for _ in 0..200 {
            let obs = generate_step(&s, &mut st).unwrap();
            for i in 0..3 {
                for c in layout.structural_zeros(i) {
                    assert_eq!(obs.phi[i][c], 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_dynamics_stay_at_rest() {
        let mut s = arx_cooperative_scenario();
        s.noise = NoiseSpec::Gaussian { variance: 0.0 };
        if let RegressorKind::ArxCooperative(layout) = &mut s.regressors {
            layout.input_std = 0.0;
        }
        let mut st = GeneratorState::new(&s, 3);
        for _ in 0..50 {
            let obs = generate_step(&s, &mut st).unwrap();
            assert!(obs.y.iter().all(|&y| y == 0.0));
        }
    }

    #[test]
    fn identical_state_identical_observation() {
        let s = arx_cooperative_scenario();
        let mut a = GeneratorState::new(&s, 42);
        for _ in 0..10 {
            generate_step(&s, &mut a).unwrap();
        }
        let mut b = a.clone();
        assert_eq!(generate_step(&s, &mut a).unwrap(), generate_step(&s, &mut b).unwrap());
    }

    #[test]
    fn adding_nodes_keeps_existing_draws() {
        let small = iid(2, 3, NoiseSpec::Gaussian { variance: 1.0 });
        let big = iid(4, 3, NoiseSpec::Gaussian { variance: 1.0 });
        let mut a = GeneratorState::new(&small, 9);
        let mut b = GeneratorState::new(&big, 9);
        for _ in 0..5 {
            let oa = generate_step(&small, &mut a).unwrap();
            let ob = generate_step(&big, &mut b).unwrap();
            assert_eq!(oa.phi[..2], ob.phi[..2]);
            assert_eq!(oa.w[..2], ob.w[..2]);
        }
    }

    #[test]
    fn noise_has_zero_conditional_mean() {
        for noise in [
            NoiseSpec::Gaussian { variance: 0.5 },
            NoiseSpec::Uniform { half_width: 2.0 },
            NoiseSpec::ScaledStudentT { dof: 5.0, scale: 0.7 },
        ] {
            let phi = DVector::from_vec(vec![1.0, -2.0]);
            let theta = DVector::from_vec(vec![0.3, 0.4]);
            let draws = 20_000;
            let mut rng = substream(17, 0, 0);
            let mut sum = 0.0;
            for _ in 0..draws {
                let y = phi.dot(&theta) + noise.sample(&mut rng);
                sum += y - phi.dot(&theta);
            }
            let mean = sum / draws as f64;
            let bound = 3.0 * noise.variance().sqrt() / (draws as f64).sqrt();
            assert!(mean.abs() < bound, "{noise:?}: {mean} vs {bound}");
        }
    }

    #[test]
    fn noise_validation() {
        assert!(NoiseSpec::ScaledStudentT { dof: 2.0, scale: 1.0 }.validate().is_err());
        assert!(NoiseSpec::Uniform { half_width: 0.0 }.validate().is_err());
        assert!(NoiseSpec::Gaussian { variance: -1.0 }.validate().is_err());
        assert_eq!(NoiseSpec::Uniform { half_width: 3.0 }.variance(), 3.0);
        assert_eq!(NoiseSpec::ScaledStudentT { dof: 4.0, scale: 1.0 }.variance(), 2.0);
    }

    #[test]
    fn scenario_dimension_errors() {
        let theta = TrueParameter::new(vec![1.0, 2.0]).unwrap();
        let err = Scenario::new(
            theta.clone(),
            RegressorKind::IidGaussian {
                covariance: DMatrix::identity(3, 3),
                masks: None,
            },
            NoiseSpec::Gaussian { variance: 1.0 },
            2,
        );
        assert!(matches!(err, Err(ModelError::DimensionMismatch { .. })));
        let err = Scenario::new(
            theta,
            RegressorKind::ArxCooperative(ArxLayout {
                inputs: vec![vec![0], vec![1]],
                input_std: 1.0,
            }),
            NoiseSpec::Gaussian { variance: 1.0 },
            2,
        );
        assert!(matches!(err, Err(ModelError::DimensionMismatch { .. })));
    }

    #[test]
    fn masks_zero_coordinates() {
        let s = Scenario::new(
            TrueParameter::new(vec![1.0, 2.0, 3.0]).unwrap(),
            RegressorKind::IidGaussian {
                covariance: DMatrix::identity(3, 3),
                masks: Some(vec![vec![true, false, true], vec![false, true, false]]),
            },
            NoiseSpec::Gaussian { variance: 1.0 },
            2,
        )
        .unwrap();
        let mut st = GeneratorState::new(&s, 0);
        let obs = generate_step(&s, &mut st).unwrap();
        assert_eq!(obs.phi[0][1], 0.0);
        assert_eq!(obs.phi[1][0], 0.0);
        assert_eq!(obs.phi[1][2], 0.0);
    }

    #[test]
    fn replay_stream_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("replay.csv");
        std::fs::write(
            &path,
            "k,i,phi_0,phi_1,y\n0,0,1.0,0.0,2.5\n0,1,0.0,1.0,-1.0\n1,0,1.0,1.0,0.5\n1,1,2.0,0.0,4.0\n",
        )
        .unwrap();
        let stream = ReplayStream::from_csv_path(&path).unwrap();
        assert_eq!((stream.len(), stream.nodes(), stream.dim()), (2, 2, 2));
        let s = Scenario::new(
            TrueParameter::new(vec![2.0, -1.0]).unwrap(),
            RegressorKind::Replayed(stream),
            NoiseSpec::Gaussian { variance: 1.0 },
            2,
        )
        .unwrap();
        let mut st = GeneratorState::new(&s, 0);
        let o = generate_step(&s, &mut st).unwrap();
        assert_eq!(o.y, vec![2.5, -1.0]);
        assert_eq!(o.w, vec![0.5, 0.0]);
        generate_step(&s, &mut st).unwrap();
        assert_eq!(
            generate_step(&s, &mut st),
            Err(ModelError::ReplayExhausted { k: 2, node: 0 })
        );
    }
}
