//! Monte-Carlo runner. Runs execute in parallel in chunks; outputs are written and
//! aggregated in run-index order so every byte is a function of the config alone.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use super::config::{Algorithm, ExperimentConfig};
use crate::analysis::{
    bound_constants, excitation_ratio, regret, AnalysisError, BoundConstants, BoundInputs, ExcitationTracker,
};
use crate::estimator::{
    centralized_step, classical_step, step_network, CentralizedState, EstimatorError, NodeState,
};
use crate::model::{generate_step, GeneratorState, ModelError};

pub const METRICS_HEADER: [&str; 6] = ["k", "i", "algorithm", "run", "sq_error", "regret"];
pub const NETWORK_HEADER: [&str; 8] = [
    "k",
    "algorithm",
    "run",
    "r_t",
    "lambda_min_coop",
    "V",
    "logdet",
    "phiPphi_max",
];
pub const AGGREGATE_HEADER: [&str; 5] = ["k", "i", "algorithm", "mean_sq_error", "mean_regret"];
pub const NETWORK_AGGREGATE_HEADER: [&str; 10] = [
    "k",
    "algorithm",
    "mean_r_t",
    "mean_lambda_min_coop",
    "mean_V",
    "mean_logdet",
    "max_phiPphi",
    "mean_accumulated_regret",
    "mean_regret_ratio",
    "mean_rate_statistic",
];

/// Number of excitation-ratio samples kept per run in the summaries.
const RATIO_SAMPLES: usize = 20;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("numerical failure in {algorithm} at run {run}, step {k}: {source}")]
    Numerical {
        algorithm: Algorithm,
        run: usize,
        k: usize,
        source: EstimatorError,
    },
    #[error("observation model failed at run {run}, step {k}: {source}")]
    Model { run: usize, k: usize, source: ModelError },
    #[error("analysis failed: {0}")]
    Analysis(#[from] AnalysisError),
    #[error("i/o failure on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl RunError {
    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        RunError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone)]
enum AlgoState {
    Nodes(Vec<NodeState>),
    Central(CentralizedState),
}

impl AlgoState {
    fn estimate(&self, i: usize) -> &DVector<f64> {
        match self {
            AlgoState::Nodes(s) => s[i].theta(),
            AlgoState::Central(c) => c.theta(),
        }
    }

    fn lyapunov(&self, theta: &DVector<f64>) -> Result<f64, EstimatorError> {
        match self {
            AlgoState::Nodes(s) => Ok(s.iter().map(|x| x.weighted_error(theta)).sum()),
            AlgoState::Central(c) => c.weighted_error(theta),
        }
    }

    fn logdet(&self) -> Result<f64, EstimatorError> {
        match self {
            AlgoState::Nodes(s) => s.iter().map(NodeState::logdet_information).sum(),
            AlgoState::Central(c) => c.logdet_information(),
        }
    }
}

fn phi_p_phi_max(state: &AlgoState, obs: &crate::model::Observation) -> f64 {
    match state {
        AlgoState::Nodes(s) => s
            .iter()
            .zip(&obs.phi)
            .map(|(x, phi)| phi.dot(&(x.p() * phi)))
            .fold(0.0, f64::max),
        AlgoState::Central(c) => c.phi_p_phi_norm(obs),
    }
}

#[derive(Debug, Clone, Serialize)]
struct TrajectoryRow<'a> {
    run: usize,
    algorithm: Algorithm,
    k: usize,
    i: usize,
    theta_hat: Vec<f64>,
    #[serde(rename = "logdet_Pinv")]
    logdet_pinv: f64,
    #[serde(rename = "P_inv", skip_serializing_if = "Option::is_none")]
    p_inv: Option<&'a [Vec<f64>]>,
}

/// Recorded network row of one run.
#[derive(Debug, Clone)]
struct NetworkPoint {
    k: usize,
    r_t: f64,
    lambda_min_coop: f64,
    lyapunov: f64,
    logdet: f64,
    phi_p_phi_max: f64,
    accumulated_regret: f64,
    sq_errors: Vec<f64>,
    regrets: Vec<f64>,
}

#[derive(Debug, Clone)]
struct AlgoRun {
    algorithm: Algorithm,
    points: Vec<NetworkPoint>,
    trajectory: Vec<String>,
    phi_p_phi_run_max: f64,
}

#[derive(Debug, Clone)]
struct RunResult {
    run: usize,
    seed: u64,
    algos: Vec<AlgoRun>,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn simulate(cfg: &ExperimentConfig, run: usize) -> Result<RunResult, RunError> {
    let seed = cfg.base_seed.wrapping_add(run as u64);
    let theta = cfg.scenario.theta.as_vector();
    let n = cfg.n();
    let mut gen = GeneratorState::new(&cfg.scenario, seed);
    let initial = cfg.initial_states();
    let p0_invs: Vec<DMatrix<f64>> = initial.iter().map(|s| s.p_inv().clone()).collect();
    let mut tracker = ExcitationTracker::new(&p0_invs, &cfg.topology)?;

    let mut states: Vec<AlgoState> = cfg
        .algorithms
        .iter()
        .map(|a| match a {
            Algorithm::Centralized => AlgoState::Central(cfg.initial_centralized()),
            _ => AlgoState::Nodes(initial.clone()),
        })
        .collect();
    let mut runs: Vec<AlgoRun> = cfg
        .algorithms
        .iter()
        .map(|&algorithm| AlgoRun {
            algorithm,
            points: Vec::with_capacity(cfg.horizon / cfg.record_cadence + 2),
            trajectory: Vec::new(),
            phi_p_phi_run_max: 0.0,
        })
        .collect();
    let mut accumulated = vec![0.0; cfg.algorithms.len()];

    for k in 0..=cfg.horizon {
        let obs = generate_step(&cfg.scenario, &mut gen).map_err(|source| RunError::Model { run, k, source })?;
        tracker.push(&obs.phi)?;
        let recording = k % cfg.record_cadence == 0 || k == cfg.horizon;
        let stats = recording.then(|| tracker.stats());

        for (a, (state, out)) in states.iter_mut().zip(runs.iter_mut()).enumerate() {
            let algorithm = out.algorithm;
            let numerical = |source| RunError::Numerical { algorithm, run, k, source };
            let regrets = (0..n)
                .map(|i| regret(&obs.phi[i], theta, state.estimate(i)))
                .collect::<Result<Vec<_>, _>>()?;
            accumulated[a] += regrets.iter().sum::<f64>();
            let ppp = phi_p_phi_max(state, &obs);
            out.phi_p_phi_run_max = out.phi_p_phi_run_max.max(ppp);

            if let Some(stats) = stats {
                let sq_errors = (0..n).map(|i| (theta - state.estimate(i)).norm_squared()).collect();
                out.points.push(NetworkPoint {
                    k,
                    r_t: stats.r_t,
                    lambda_min_coop: stats.lambda_min_coop,
                    lyapunov: state.lyapunov(theta).map_err(numerical)?,
                    logdet: state.logdet().map_err(numerical)?,
                    phi_p_phi_max: ppp,
                    accumulated_regret: accumulated[a],
                    sq_errors,
                    regrets,
                });
                if cfg.output.trajectories {
                    write_trajectory(cfg, run, k, state, out).map_err(numerical)?;
                }
            }

            if k < cfg.horizon {
                *state = match state {
                    AlgoState::Nodes(s) => {
                        let step = match algorithm {
                            Algorithm::Distributed => step_network(s, &obs, &cfg.topology, cfg.combine_rounds),
                            _ => classical_step(s, &obs),
                        }
                        .map_err(numerical)?;
                        AlgoState::Nodes(step.states)
                    }
                    AlgoState::Central(c) => AlgoState::Central(centralized_step(c, &obs).map_err(numerical)?),
                };
            }
        }
    }
    Ok(RunResult { run, seed, algos: runs })
}

fn write_trajectory(
    cfg: &ExperimentConfig,
    run: usize,
    k: usize,
    state: &AlgoState,
    out: &mut AlgoRun,
) -> Result<(), EstimatorError> {
    let n = cfg.n();
    for i in 0..n {
        let (theta_hat, logdet, p_inv) = match state {
            AlgoState::Nodes(s) => (
                s[i].theta().iter().copied().collect(),
                s[i].logdet_information()?,
                cfg.output.full_matrices.then(|| matrix_rows(s[i].p_inv())),
            ),
            AlgoState::Central(c) => (
                c.theta().iter().copied().collect(),
                c.logdet_information()?,
                cfg.output
                    .full_matrices
                    .then(|| crate::toolkit::inverse_spd(c.p()).map(|x| matrix_rows(&x)))
                    .transpose()?,
            ),
        };
        let row = TrajectoryRow {
            run,
            algorithm: out.algorithm,
            k,
            i,
            theta_hat,
            logdet_pinv: logdet,
            p_inv: p_inv.as_deref(),
        };
        out.trajectory.push(serde_json::to_string(&row).expect("plain data serializes"));
    }
    Ok(())
}

/// Means over runs at every recorded `k` for one algorithm.
#[derive(Debug, Clone, Serialize)]
pub struct AggregateSeries {
    pub algorithm: Algorithm,
    pub ks: Vec<usize>,
    /// `[index of k][node]`.
    pub mean_sq_error: Vec<Vec<f64>>,
    pub mean_regret: Vec<Vec<f64>>,
    pub mean_accumulated_regret: Vec<f64>,
    pub mean_r_t: Vec<f64>,
    pub mean_lambda_min_coop: Vec<f64>,
    pub mean_lyapunov: Vec<f64>,
    pub mean_logdet: Vec<f64>,
    /// Maximum over runs.
    pub max_phi_p_phi: Vec<f64>,
    /// Mean of `Σ_i Σ_{k'≤k} R_{k',i} / log(r_k)`.
    pub mean_regret_ratio: Vec<f64>,
    /// Mean of `‖Θ̃_k‖² λ_min^{n,k} / log(r_k)`.
    pub mean_rate_statistic: Vec<f64>,
}

impl AggregateSeries {
    fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            ks: Vec::new(),
            mean_sq_error: Vec::new(),
            mean_regret: Vec::new(),
            mean_accumulated_regret: Vec::new(),
            mean_r_t: Vec::new(),
            mean_lambda_min_coop: Vec::new(),
            mean_lyapunov: Vec::new(),
            mean_logdet: Vec::new(),
            max_phi_p_phi: Vec::new(),
            mean_regret_ratio: Vec::new(),
            mean_rate_statistic: Vec::new(),
        }
    }

    fn add(&mut self, run: &AlgoRun) {
        if self.ks.is_empty() {
            let len = run.points.len();
            let n = run.points.first().map_or(0, |p| p.sq_errors.len());
            self.ks = run.points.iter().map(|p| p.k).collect();
            self.mean_sq_error = vec![vec![0.0; n]; len];
            self.mean_regret = vec![vec![0.0; n]; len];
            for v in [
                &mut self.mean_accumulated_regret,
                &mut self.mean_r_t,
                &mut self.mean_lambda_min_coop,
                &mut self.mean_lyapunov,
                &mut self.mean_logdet,
                &mut self.max_phi_p_phi,
                &mut self.mean_regret_ratio,
                &mut self.mean_rate_statistic,
            ] {
                *v = vec![0.0; len];
            }
        }
        for (idx, p) in run.points.iter().enumerate() {
            for (acc, x) in self.mean_sq_error[idx].iter_mut().zip(&p.sq_errors) {
                *acc += x;
            }
            for (acc, x) in self.mean_regret[idx].iter_mut().zip(&p.regrets) {
                *acc += x;
            }
            let log_r = p.r_t.ln();
            let total_sq: f64 = p.sq_errors.iter().sum();
            self.mean_accumulated_regret[idx] += p.accumulated_regret;
            self.mean_r_t[idx] += p.r_t;
            self.mean_lambda_min_coop[idx] += p.lambda_min_coop;
            self.mean_lyapunov[idx] += p.lyapunov;
            self.mean_logdet[idx] += p.logdet;
            self.max_phi_p_phi[idx] = self.max_phi_p_phi[idx].max(p.phi_p_phi_max);
            self.mean_regret_ratio[idx] += p.accumulated_regret / log_r;
            self.mean_rate_statistic[idx] += total_sq * p.lambda_min_coop / log_r;
        }
    }

    fn finish(&mut self, runs: usize) {
        let r = runs as f64;
        for row in self.mean_sq_error.iter_mut().chain(self.mean_regret.iter_mut()) {
            row.iter_mut().for_each(|x| *x /= r);
        }
        for v in [
            &mut self.mean_accumulated_regret,
            &mut self.mean_r_t,
            &mut self.mean_lambda_min_coop,
            &mut self.mean_lyapunov,
            &mut self.mean_logdet,
            &mut self.mean_regret_ratio,
            &mut self.mean_rate_statistic,
        ] {
            v.iter_mut().for_each(|x| *x /= r);
        }
    }

    /// Position of `k` among the recorded indices.
    pub fn index_of(&self, k: usize) -> Option<usize> {
        self.ks.binary_search(&k).ok()
    }

    /// `log(mean r_t) / mean λ_min^{n,t}` at every recorded `k`.
    pub fn excitation_ratio(&self) -> Vec<f64> {
        self.mean_r_t
            .iter()
            .zip(&self.mean_lambda_min_coop)
            .map(|(&r, &l)| excitation_ratio(r, l))
            .collect()
    }
}

/// Monte-Carlo check of the finite-horizon expected regret bound.
#[derive(Debug, Clone, Serialize)]
pub struct BoundCheck {
    pub constants: BoundConstants,
    pub mean_accumulated_regret: f64,
    pub mean_r_t: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct AlgorithmSummary {
    pub algorithm: Algorithm,
    pub mean_final_sq_errors: Vec<f64>,
    pub mean_accumulated_regret: f64,
    /// `(1/(nT)) Σ Σ R`, `None` for `T = 0`.
    pub mean_averaged_regret: Option<f64>,
    pub excitation_ratio_samples: Vec<(usize, f64)>,
    pub phi_p_phi_max: f64,
    /// Only for the distributed algorithm.
    pub bound: Option<BoundCheck>,
    #[serde(skip)]
    pub series: AggregateSeries,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub runs: usize,
    pub horizon: usize,
    pub algorithms: Vec<AlgorithmSummary>,
    pub wall_time_secs: f64,
    pub output_dir: PathBuf,
}

impl RunSummary {
    pub fn algorithm(&self, a: Algorithm) -> Option<&AlgorithmSummary> {
        self.algorithms.iter().find(|s| s.algorithm == a)
    }
}

#[derive(Serialize)]
struct RunLine<'a> {
    record: &'static str,
    run: usize,
    seed: u64,
    algorithm: Algorithm,
    final_sq_errors: &'a [f64],
    accumulated_regret: f64,
    averaged_regret: Option<f64>,
    r_t: f64,
    lambda_min_coop: f64,
    excitation_ratio: f64,
    lyapunov: f64,
    phi_p_phi_max: f64,
    excitation_ratio_samples: Vec<(usize, f64)>,
}

#[derive(Serialize)]
struct AggregateLine<'a> {
    record: &'static str,
    #[serde(flatten)]
    summary: &'a AlgorithmSummary,
}

fn sample_indices(len: usize) -> Vec<usize> {
    if len <= RATIO_SAMPLES {
        return (0..len).collect();
    }
    let mut idx: Vec<usize> = (0..RATIO_SAMPLES).map(|s| s * (len - 1) / (RATIO_SAMPLES - 1)).collect();
    idx.dedup();
    idx
}

fn averaged(acc: f64, n: usize, horizon: usize) -> Option<f64> {
    (horizon > 0).then(|| acc / (n * horizon) as f64)
}

struct Writers {
    metrics: csv::Writer<BufWriter<File>>,
    network: csv::Writer<BufWriter<File>>,
    summary: BufWriter<File>,
    trajectories: Option<BufWriter<File>>,
    dir: PathBuf,
}

fn csv_writer(path: &Path, header: &[&str]) -> Result<csv::Writer<BufWriter<File>>, RunError> {
    let file = File::create(path).map_err(|e| RunError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(header).map_err(|e| RunError::io(path, e))?;
    Ok(w)
}

impl Writers {
    fn open(cfg: &ExperimentConfig) -> Result<Self, RunError> {
        let dir = cfg.output.dir.clone();
        fs::create_dir_all(&dir).map_err(|e| RunError::io(&dir, e))?;
        let summary_path = dir.join("summary.jsonl");
        let summary = BufWriter::new(File::create(&summary_path).map_err(|e| RunError::io(&summary_path, e))?);
        let trajectories = if cfg.output.trajectories {
            let p = dir.join("trajectories.jsonl");
            Some(BufWriter::new(File::create(&p).map_err(|e| RunError::io(&p, e))?))
        } else {
            None
        };
        Ok(Self {
            metrics: csv_writer(&dir.join("metrics.csv"), &METRICS_HEADER)?,
            network: csv_writer(&dir.join("network.csv"), &NETWORK_HEADER)?,
            summary,
            trajectories,
            dir,
        })
    }

    fn write_run(&mut self, cfg: &ExperimentConfig, res: &RunResult) -> Result<(), RunError> {
        let metrics_path = self.dir.join("metrics.csv");
        let network_path = self.dir.join("network.csv");
        for algo in &res.algos {
            let name = algo.algorithm.id();
            for p in &algo.points {
                for (i, (sq, r)) in p.sq_errors.iter().zip(&p.regrets).enumerate() {
                    self.metrics
                        .serialize((p.k, i, name, res.run, sq, r))
                        .map_err(|e| RunError::io(&metrics_path, e))?;
                }
                self.network
                    .serialize((
                        p.k,
                        name,
                        res.run,
                        p.r_t,
                        p.lambda_min_coop,
                        p.lyapunov,
                        p.logdet,
                        p.phi_p_phi_max,
                    ))
                    .map_err(|e| RunError::io(&network_path, e))?;
            }
            let last = algo.points.last().expect("k = T is always recorded");
            let line = RunLine {
                record: "run",
                run: res.run,
                seed: res.seed,
                algorithm: algo.algorithm,
                final_sq_errors: &last.sq_errors,
                accumulated_regret: last.accumulated_regret,
                averaged_regret: averaged(last.accumulated_regret, cfg.n(), cfg.horizon),
                r_t: last.r_t,
                lambda_min_coop: last.lambda_min_coop,
                excitation_ratio: excitation_ratio(last.r_t, last.lambda_min_coop),
                lyapunov: last.lyapunov,
                phi_p_phi_max: algo.phi_p_phi_run_max,
                excitation_ratio_samples: sample_indices(algo.points.len())
                    .into_iter()
                    .map(|j| {
                        let p = &algo.points[j];
                        (p.k, excitation_ratio(p.r_t, p.lambda_min_coop))
                    })
                    .collect(),
            };
            self.json_line(&line)?;
            if let Some(t) = &mut self.trajectories {
                for row in &algo.trajectory {
                    writeln!(t, "{row}").map_err(|e| RunError::io(&self.dir.join("trajectories.jsonl"), e))?;
                }
            }
        }
        Ok(())
    }

    fn json_line<T: Serialize>(&mut self, value: &T) -> Result<(), RunError> {
        let path = self.dir.join("summary.jsonl");
        serde_json::to_writer(&mut self.summary, value).map_err(|e| RunError::io(&path, e))?;
        writeln!(self.summary).map_err(|e| RunError::io(&path, e))
    }

    fn finish(mut self, summaries: &[AlgorithmSummary]) -> Result<(), RunError> {
        for s in summaries {
            self.json_line(&AggregateLine {
                record: "aggregate",
                summary: s,
            })?;
        }
        let flush = |r: std::io::Result<()>, name: &str| r.map_err(|e| RunError::io(&self.dir.join(name), e));
        flush(self.metrics.flush(), "metrics.csv")?;
        flush(self.network.flush(), "network.csv")?;
        flush(self.summary.flush(), "summary.jsonl")?;
        if let Some(t) = &mut self.trajectories {
            flush(t.flush(), "trajectories.jsonl")?;
        }
        Ok(())
    }
}

fn write_aggregates(dir: &Path, series: &[AggregateSeries]) -> Result<(), RunError> {
    let path = dir.join("aggregate.csv");
    let mut w = csv_writer(&path, &AGGREGATE_HEADER)?;
    for s in series {
        for (idx, &k) in s.ks.iter().enumerate() {
            for (i, (sq, r)) in s.mean_sq_error[idx].iter().zip(&s.mean_regret[idx]).enumerate() {
                w.serialize((k, i, s.algorithm.id(), sq, r)).map_err(|e| RunError::io(&path, e))?;
            }
        }
    }
    w.flush().map_err(|e| RunError::io(&path, e))?;

    let path = dir.join("network_aggregate.csv");
    let mut w = csv_writer(&path, &NETWORK_AGGREGATE_HEADER)?;
    for s in series {
        for (idx, &k) in s.ks.iter().enumerate() {
            w.serialize((
                k,
                s.algorithm.id(),
                s.mean_r_t[idx],
                s.mean_lambda_min_coop[idx],
                s.mean_lyapunov[idx],
                s.mean_logdet[idx],
                s.max_phi_p_phi[idx],
                s.mean_accumulated_regret[idx],
                s.mean_regret_ratio[idx],
                s.mean_rate_statistic[idx],
            ))
            .map_err(|e| RunError::io(&path, e))?;
        }
    }
    w.flush().map_err(|e| RunError::io(&path, e))
}

/// `None` when no positive noise-variance bound is available, e.g. noiseless data.
fn bound_check(cfg: &ExperimentConfig, s: &AggregateSeries, empirical_c: f64) -> Result<Option<BoundCheck>, RunError> {
    let last = s.ks.len() - 1;
    let initial_logdet: f64 = cfg
        .initial_states()
        .iter()
        .map(NodeState::logdet_information)
        .sum::<Result<f64, _>>()
        .map_err(|source| RunError::Numerical {
            algorithm: s.algorithm,
            run: 0,
            k: 0,
            source,
        })?;
    let constants = match bound_constants(&BoundInputs {
        m: cfg.m(),
        n: cfg.n(),
        noise_variances: Some(cfg.scenario.noise_variances()),
        sigma_bar: cfg.sigma_bar,
        c: cfg.phi_p_phi_bound.unwrap_or(empirical_c),
        mean_initial_lyapunov: s.mean_lyapunov[0],
        mean_initial_logdet: initial_logdet,
    }) {
        Ok(c) => c,
        Err(AnalysisError::MissingVarianceBound) if cfg.sigma_bar.is_none() => return Ok(None),
        Err(e) => return Err(e.into()),
    };
    let mean_r_t = s.mean_r_t[last];
    let bound = constants.bound(mean_r_t);
    let mean_accumulated_regret = s.mean_accumulated_regret[last];
    Ok(Some(BoundCheck {
        constants,
        mean_accumulated_regret,
        mean_r_t,
        bound,
        holds: mean_accumulated_regret <= bound,
    }))
}

#[derive(Serialize)]
struct Meta {
    started_unix_secs: u64,
    wall_time_secs: f64,
    threads: usize,
    crate_version: &'static str,
}

/// Runs every configured Monte-Carlo replicate and writes the output files.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary, RunError> {
    cfg.check().map_err(|e| RunError::Io {
        path: cfg.output.dir.clone(),
        message: e.to_string(),
    })?;
    let started = Instant::now();
    let started_unix = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut writers = Writers::open(cfg)?;
    let mut series: Vec<AggregateSeries> = cfg.algorithms.iter().map(|&a| AggregateSeries::new(a)).collect();
    let mut phi_p_phi_max = vec![0.0f64; cfg.algorithms.len()];

    let chunk = (2 * rayon::current_num_threads()).max(1);
    let all: Vec<usize> = (0..cfg.runs).collect();
    for runs in all.chunks(chunk) {
        let results = runs
            .par_iter()
            .map(|&r| simulate(cfg, r))
            .collect::<Result<Vec<_>, _>>()?;
        for res in &results {
            writers.write_run(cfg, res)?;
            for (a, algo) in res.algos.iter().enumerate() {
                series[a].add(algo);
                phi_p_phi_max[a] = phi_p_phi_max[a].max(algo.phi_p_phi_run_max);
            }
        }
    }

    let mut summaries = Vec::with_capacity(series.len());
    for (s, &ppp) in series.iter_mut().zip(&phi_p_phi_max) {
        s.finish(cfg.runs);
        let last = s.ks.len() - 1;
        let ratios = s.excitation_ratio();
        summaries.push(AlgorithmSummary {
            algorithm: s.algorithm,
            mean_final_sq_errors: s.mean_sq_error[last].clone(),
            mean_accumulated_regret: s.mean_accumulated_regret[last],
            mean_averaged_regret: averaged(s.mean_accumulated_regret[last], cfg.n(), cfg.horizon),
            excitation_ratio_samples: sample_indices(s.ks.len())
                .into_iter()
                .map(|j| (s.ks[j], ratios[j]))
                .collect(),
            phi_p_phi_max: ppp,
            bound: if s.algorithm == Algorithm::Distributed {
                bound_check(cfg, s, ppp)?
            } else {
                None
            },
            series: s.clone(),
        });
    }
    writers.finish(&summaries)?;
    write_aggregates(&cfg.output.dir, &series)?;

    let wall_time_secs = started.elapsed().as_secs_f64();
    let meta_path = cfg.output.dir.join("meta.json");
    let meta = Meta {
        started_unix_secs: started_unix,
        wall_time_secs,
        threads: rayon::current_num_threads(),
        crate_version: env!("CARGO_PKG_VERSION"),
    };
    fs::write(&meta_path, serde_json::to_vec_pretty(&meta).expect("plain data serializes"))
        .map_err(|e| RunError::io(&meta_path, e))?;

    Ok(RunSummary {
        runs: cfg.runs,
        horizon: cfg.horizon,
        algorithms: summaries,
        wall_time_secs,
        output_dir: cfg.output.dir.clone(),
    })
}
