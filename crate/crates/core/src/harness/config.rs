//! TOML experiment configuration.
//!
//! ```toml
//! horizon = 200
//! runs = 100
//! base_seed = 0
//! algorithms = ["distributed", "classical_per_node"]
//!
//! [output]
//! dir = "out/arx"
//!
//! [topology]
//! weights = [[0.6667, 0.3333, 0.0], ...]   # or: csv = "weights.csv"
//!
//! [scenario]
//! n = 3
//! theta = [0.2, 0.5, ...]
//! noise = { kind = "gaussian", variance = 0.1 }
//! regressors = { kind = "arx_cooperative", inputs = [[0, 1], [0, 1, 2], [1, 2]] }
//! ```
//!
//! The README documents every key.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::estimator::{CentralizedState, NodeState};
use crate::graph::NetworkTopology;
use crate::model::{ArxLayout, NoiseSpec, RegressorKind, ReplayStream, Scenario, TrueParameter};

/// Largest parameter dimension accepted from a config file.
pub const MAX_PARAM_DIM: usize = 32;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("`{first}` does not match `{second}`: {detail}")]
    CrossFieldMismatch {
        first: &'static str,
        second: &'static str,
        detail: String,
    },
    #[error("invalid `{field}`: {detail}")]
    Invalid { field: &'static str, detail: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    ClassicalPerNode,
    Distributed,
    Centralized,
}

impl Algorithm {
    pub fn id(self) -> &'static str {
        match self {
            Algorithm::ClassicalPerNode => "classical_per_node",
            Algorithm::Distributed => "distributed",
            Algorithm::Centralized => "centralized",
        }
    }

    pub fn from_id(s: &str) -> Option<Self> {
        [Algorithm::ClassicalPerNode, Algorithm::Distributed, Algorithm::Centralized]
            .into_iter()
            .find(|a| a.id() == s)
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    horizon: usize,
    #[serde(default = "one")]
    runs: usize,
    #[serde(default)]
    base_seed: u64,
    algorithms: Vec<Algorithm>,
    #[serde(default = "one")]
    combine_rounds: usize,
    record_cadence: Option<usize>,
    output: RawOutput,
    topology: RawTopology,
    scenario: RawScenario,
    #[serde(default)]
    initial: RawInitial,
    #[serde(default)]
    analysis: RawAnalysis,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    dir: PathBuf,
    #[serde(default)]
    trajectories: bool,
    #[serde(default)]
    full_matrices: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTopology {
    weights: Option<Vec<Vec<f64>>>,
    csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    n: usize,
    theta: Vec<f64>,
    noise: NoiseSpec,
    regressors: RawRegressors,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawRegressors {
    IidGaussian {
        covariance: Option<Vec<Vec<f64>>>,
        masks: Option<Vec<Vec<bool>>>,
    },
    ArxCooperative {
        inputs: Vec<Vec<usize>>,
        #[serde(default = "unit_std")]
        input_std: f64,
    },
    Replayed {
        path: PathBuf,
    },
}

fn unit_std() -> f64 {
    1.0
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInitial {
    alpha0: Option<f64>,
    theta0: Option<Vec<f64>>,
    nodes: Option<Vec<RawNodeInit>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNodeInit {
    theta0: Option<Vec<f64>>,
    p0: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAnalysis {
    phi_p_phi_bound: Option<f64>,
    sigma_bar: Option<f64>,
}

/// Initial `(θ_{0,i}, P_{0,i})` for one node.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeInit {
    pub theta0: DVector<f64>,
    pub p0: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct OutputSpec {
    pub dir: PathBuf,
    pub trajectories: bool,
    pub full_matrices: bool,
}

/// A validated experiment with defaults resolved.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub topology: NetworkTopology,
    pub scenario: Scenario,
    pub horizon: usize,
    pub runs: usize,
    pub base_seed: u64,
    /// Sorted and deduplicated.
    pub algorithms: Vec<Algorithm>,
    pub combine_rounds: usize,
    pub record_cadence: usize,
    pub output: OutputSpec,
    pub initial: Vec<NodeInit>,
    /// Configured bound on `‖Φ^T P Φ‖`; the empirical maximum is used when absent.
    pub phi_p_phi_bound: Option<f64>,
    pub sigma_bar: Option<f64>,
}

impl ExperimentConfig {
    /// `record_cadence` default: every step up to a thousand steps, else every tenth.
    pub fn default_cadence(horizon: usize) -> usize {
        if horizon <= 1000 {
            1
        } else {
            10
        }
    }

    /// Programmatic construction with the documented defaults.
    pub fn new(
        topology: NetworkTopology,
        scenario: Scenario,
        horizon: usize,
        runs: usize,
        algorithms: Vec<Algorithm>,
        output_dir: impl Into<PathBuf>,
    ) -> Result<Self, ConfigError> {
        let m = scenario.m();
        let initial = vec![
            NodeInit {
                theta0: DVector::zeros(m),
                p0: DMatrix::identity(m, m),
            };
            scenario.n
        ];
        let mut cfg = Self {
            topology,
            scenario,
            horizon,
            runs,
            base_seed: 0,
            algorithms,
            combine_rounds: 1,
            record_cadence: Self::default_cadence(horizon),
            output: OutputSpec {
                dir: output_dir.into(),
                trajectories: false,
                full_matrices: false,
            },
            initial,
            phi_p_phi_bound: None,
            sigma_bar: None,
        };
        cfg.algorithms.sort();
        cfg.algorithms.dedup();
        cfg.check()?;
        Ok(cfg)
    }

    pub fn n(&self) -> usize {
        self.scenario.n
    }

    pub fn m(&self) -> usize {
        self.scenario.m()
    }

    pub fn initial_states(&self) -> Vec<NodeState> {
        self.initial
            .iter()
            .map(|init| NodeState::new(init.theta0.clone(), init.p0.clone()).expect("validated initial covariance"))
            .collect()
    }

    /// Fusion-centre start: pooled information `Σ P_{0,i}^{-1}` and the information-weighted
    /// mean of the `θ_{0,i}`, which reduces to `(θ_0, P_0 / n)` for identical nodes.
    pub fn initial_centralized(&self) -> CentralizedState {
        let states = self.initial_states();
        let m = self.m();
        let mut info = DMatrix::zeros(m, m);
        let mut moment = DVector::zeros(m);
        for s in &states {
            info += s.p_inv();
            moment += s.p_inv() * s.theta();
        }
        let chol = nalgebra::Cholesky::new(info).expect("sum of SPD blocks");
        CentralizedState::new(chol.solve(&moment), chol.inverse()).expect("SPD")
    }

    /// Re-runs the cross-field checks, e.g. after editing fields in code.
    pub fn check(&self) -> Result<(), ConfigError> {
        let invalid = |field, detail: String| Err(ConfigError::Invalid { field, detail });
        if self.runs == 0 {
            return invalid("runs", "need at least one run".into());
        }
        if self.record_cadence == 0 {
            return invalid("record_cadence", "must be at least 1".into());
        }
        if self.combine_rounds == 0 {
            return invalid("combine_rounds", "must be at least 1".into());
        }
        if self.algorithms.is_empty() {
            return invalid("algorithms", "list is empty".into());
        }
        if self.m() > MAX_PARAM_DIM {
            return invalid("scenario.theta", format!("dimension {} exceeds {MAX_PARAM_DIM}", self.m()));
        }
        if self.topology.n() != self.scenario.n {
            return Err(ConfigError::CrossFieldMismatch {
                first: "topology",
                second: "scenario.n",
                detail: format!("{} nodes vs {}", self.topology.n(), self.scenario.n),
            });
        }
        if self.initial.len() != self.scenario.n {
            return Err(ConfigError::CrossFieldMismatch {
                first: "initial.nodes",
                second: "scenario.n",
                detail: format!("{} entries vs {} nodes", self.initial.len(), self.scenario.n),
            });
        }
        for init in &self.initial {
            if init.theta0.len() != self.m() || init.p0.shape() != (self.m(), self.m()) {
                return Err(ConfigError::CrossFieldMismatch {
                    first: "initial",
                    second: "scenario.theta",
                    detail: format!("initial state must have dimension {}", self.m()),
                });
            }
            if NodeState::new(init.theta0.clone(), init.p0.clone()).is_err() {
                return invalid("initial.nodes.p0", "must be symmetric positive definite".into());
            }
        }
        if let RegressorKind::Replayed(stream) = &self.scenario.regressors {
            if stream.len() < self.horizon + 1 {
                return Err(ConfigError::CrossFieldMismatch {
                    first: "scenario.regressors.path",
                    second: "horizon",
                    detail: format!("replay holds {} steps, {} needed", stream.len(), self.horizon + 1),
                });
            }
        }
        self.scenario
            .validate()
            .map_err(|e| ConfigError::Invalid {
                field: "scenario",
                detail: e.to_string(),
            })
    }
}

fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |s| s.chars().count()) + 1;
    (line, column)
}

fn matrix(rows: &[Vec<f64>], field: &'static str) -> Result<DMatrix<f64>, ConfigError> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if r == 0 || rows.iter().any(|row| row.len() != c) {
        return Err(ConfigError::Invalid {
            field,
            detail: "rows must be non-empty and of equal length".into(),
        });
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

/// Parses a config from TOML text; relative paths resolve against `base_dir`.
pub fn parse_config(text: &str, base_dir: &Path) -> Result<ExperimentConfig, ConfigError> {
    let raw: RawConfig = toml::from_str(text).map_err(|e| {
        let (line, column) = e.span().map_or((0, 0), |s| line_col(text, s.start));
        ConfigError::Parse {
            line,
            column,
            message: e.message().to_string(),
        }
    })?;
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base_dir.join(p) };

    let topology = match (&raw.topology.weights, &raw.topology.csv) {
        (Some(rows), None) => NetworkTopology::from_rows(rows),
        (None, Some(path)) => NetworkTopology::from_csv_path(resolve(path)),
        _ => {
            return Err(ConfigError::Invalid {
                field: "topology",
                detail: "give exactly one of `weights` or `csv`".into(),
            })
        }
    }
    .map_err(|e| ConfigError::Invalid {
        field: "topology",
        detail: e.to_string(),
    })?;

    let theta = TrueParameter::new(raw.scenario.theta.clone()).map_err(|e| ConfigError::Invalid {
        field: "scenario.theta",
        detail: e.to_string(),
    })?;
    let m = theta.dim();
    let n = raw.scenario.n;
    let regressors = match &raw.scenario.regressors {
        RawRegressors::IidGaussian { covariance, masks } => RegressorKind::IidGaussian {
            covariance: match covariance {
                Some(rows) => matrix(rows, "scenario.regressors.covariance")?,
                None => DMatrix::identity(m, m),
            },
            masks: masks.clone(),
        },
        RawRegressors::ArxCooperative { inputs, input_std } => {
            let layout = ArxLayout {
                inputs: inputs.clone(),
                input_std: *input_std,
            };
            if layout.inputs.len() != n {
                return Err(ConfigError::CrossFieldMismatch {
                    first: "scenario.regressors.inputs",
                    second: "scenario.n",
                    detail: format!("{} input lists vs {n} nodes", layout.inputs.len()),
                });
            }
            if layout.param_dim() != m {
                return Err(ConfigError::CrossFieldMismatch {
                    first: "scenario.theta",
                    second: "scenario.regressors.inputs",
                    detail: format!("theta has {m} entries, the layout needs {}", layout.param_dim()),
                });
            }
            RegressorKind::ArxCooperative(layout)
        }
        RawRegressors::Replayed { path } => {
            let stream = ReplayStream::from_csv_path(resolve(path)).map_err(|e| ConfigError::Invalid {
                field: "scenario.regressors.path",
                detail: e.to_string(),
            })?;
            if stream.dim() != m || stream.nodes() != n {
                return Err(ConfigError::CrossFieldMismatch {
                    first: "scenario.regressors.path",
                    second: "scenario.theta",
                    detail: format!(
                        "replay has {} nodes of dimension {}, scenario has {n} of {m}",
                        stream.nodes(),
                        stream.dim()
                    ),
                });
            }
            RegressorKind::Replayed(stream)
        }
    };
    if let RegressorKind::IidGaussian { covariance, .. } = &regressors {
        if covariance.shape() != (m, m) {
            return Err(ConfigError::CrossFieldMismatch {
                first: "scenario.regressors.covariance",
                second: "scenario.theta",
                detail: format!("covariance is {}x{}, theta has {m} entries", covariance.nrows(), covariance.ncols()),
            });
        }
    }
    if topology.n() != n {
        return Err(ConfigError::CrossFieldMismatch {
            first: "topology",
            second: "scenario.n",
            detail: format!("{} nodes vs {n}", topology.n()),
        });
    }
    let scenario = Scenario::new(theta, regressors, raw.scenario.noise, n).map_err(|e| ConfigError::Invalid {
        field: "scenario",
        detail: e.to_string(),
    })?;

    let alpha0 = raw.initial.alpha0.unwrap_or(1.0);
    if !(alpha0.is_finite() && alpha0 > 0.0) {
        return Err(ConfigError::Invalid {
            field: "initial.alpha0",
            detail: format!("must be positive, got {alpha0}"),
        });
    }
    let common_theta0 = match &raw.initial.theta0 {
        Some(t) if t.len() != m => {
            return Err(ConfigError::CrossFieldMismatch {
                first: "initial.theta0",
                second: "scenario.theta",
                detail: format!("{} entries vs {m}", t.len()),
            })
        }
        Some(t) => DVector::from_column_slice(t),
        None => DVector::zeros(m),
    };
    let overrides = raw.initial.nodes.clone().unwrap_or_else(|| vec![RawNodeInit::default(); n]);
    if overrides.len() != n {
        return Err(ConfigError::CrossFieldMismatch {
            first: "initial.nodes",
            second: "scenario.n",
            detail: format!("{} entries vs {n} nodes", overrides.len()),
        });
    }
    let initial = overrides
        .iter()
        .map(|o| {
            Ok(NodeInit {
                theta0: o
                    .theta0
                    .as_ref()
                    .map_or_else(|| common_theta0.clone(), |t| DVector::from_column_slice(t)),
                p0: match &o.p0 {
                    Some(rows) => matrix(rows, "initial.nodes.p0")?,
                    None => DMatrix::identity(m, m) * alpha0,
                },
            })
        })
        .collect::<Result<Vec<_>, ConfigError>>()?;

    let mut algorithms = raw.algorithms.clone();
    algorithms.sort();
    algorithms.dedup();
    let cfg = ExperimentConfig {
        topology,
        scenario,
        horizon: raw.horizon,
        runs: raw.runs,
        base_seed: raw.base_seed,
        algorithms,
        combine_rounds: raw.combine_rounds,
        record_cadence: raw
            .record_cadence
            .unwrap_or_else(|| ExperimentConfig::default_cadence(raw.horizon)),
        output: OutputSpec {
            dir: resolve(&raw.output.dir),
            trajectories: raw.output.trajectories,
            full_matrices: raw.output.full_matrices,
        },
        initial,
        phi_p_phi_bound: raw.analysis.phi_p_phi_bound,
        sigma_bar: raw.analysis.sigma_bar,
    };
    cfg.check()?;
    Ok(cfg)
}

/// Reads and validates a config file.
pub fn validate_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_config(&text, base)
}
