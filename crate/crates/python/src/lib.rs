//! Python bindings. Vectors are lists of floats, matrices are lists of rows.

use std::path::PathBuf;

use diffusion_ls::analysis::{self, ExcitationTracker};
use diffusion_ls::estimator::{self, AdaptOutput, CentralizedState, NodeState};
use diffusion_ls::graph::NetworkTopology;
use diffusion_ls::harness;
use diffusion_ls::model::{self, GeneratorState, NoiseSpec, Observation, RegressorKind, Scenario, TrueParameter};
use diffusion_ls::toolkit::{run_lemma_suite, LemmaKind, SuiteConfig};
use nalgebra::{DMatrix, DVector};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(diffusion_ls_py, DiffusionError, PyException);

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    DiffusionError::new_err(e.to_string())
}

fn vector(v: Vec<f64>) -> DVector<f64> {
    DVector::from_vec(v)
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("ragged matrix rows"));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn to_list(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(err)?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Topology", module = "diffusion_ls_py", frozen)]
struct PyTopology(NetworkTopology);

#[pymethods]
impl PyTopology {
    #[new]
    fn new(weights: Vec<Vec<f64>>) -> PyResult<Self> {
        NetworkTopology::new(matrix(weights)?).map(Self).map_err(err)
    }

    #[staticmethod]
    fn identity(n: usize) -> PyResult<Self> {
        NetworkTopology::identity(n).map(Self).map_err(err)
    }

    /// The three-node network used by the cooperative ARX example.
    #[staticmethod]
    fn arx_cooperative() -> Self {
        Self(model::arx_cooperative_topology())
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n()
    }

    #[getter]
    fn diameter(&self) -> usize {
        self.0.diameter()
    }

    #[getter]
    fn a_min(&self) -> f64 {
        self.0.a_min()
    }

    #[getter]
    fn weights(&self) -> Vec<Vec<f64>> {
        self.0.to_rows()
    }

    fn neighbors(&self, i: usize) -> PyResult<Vec<usize>> {
        self.0.neighbors(i).map_err(err)
    }

    fn power(&self, k: usize) -> Vec<Vec<f64>> {
        to_rows(&self.0.power(k))
    }

    fn __repr__(&self) -> String {
        format!("Topology(n={}, diameter={}, a_min={})", self.0.n(), self.0.diameter(), self.0.a_min())
    }
}

#[pyclass(name = "Observation", module = "diffusion_ls_py", frozen)]
struct PyObservation(Observation);

#[pymethods]
impl PyObservation {
    #[new]
    fn new(theta: Vec<f64>, phi: Vec<Vec<f64>>, w: Vec<f64>) -> PyResult<Self> {
        let phi = phi.into_iter().map(vector).collect();
        Observation::from_parts(&vector(theta), phi, w).map(Self).map_err(err)
    }

    #[getter]
    fn phi(&self) -> Vec<Vec<f64>> {
        self.0.phi.iter().map(to_list).collect()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.0.y.clone()
    }

    #[getter]
    fn w(&self) -> Vec<f64> {
        self.0.w.clone()
    }
}

#[pyclass(name = "Scenario", module = "diffusion_ls_py", frozen)]
struct PyScenario(Scenario);

#[pymethods]
impl PyScenario {
    #[staticmethod]
    fn arx_cooperative() -> Self {
        Self(model::arx_cooperative_scenario())
    }

    /// I.i.d. Gaussian regressors with Gaussian noise; identity covariance by default.
    #[staticmethod]
    #[pyo3(signature = (theta, n, noise_variance, covariance=None))]
    fn iid_gaussian(
        theta: Vec<f64>,
        n: usize,
        noise_variance: f64,
        covariance: Option<Vec<Vec<f64>>>,
    ) -> PyResult<Self> {
        let m = theta.len();
        let covariance = match covariance {
            Some(c) => matrix(c)?,
            None => DMatrix::identity(m, m),
        };
        let theta = TrueParameter::new(theta).map_err(err)?;
        Scenario::new(
            theta,
            RegressorKind::IidGaussian {
                covariance,
                masks: None,
            },
            NoiseSpec::Gaussian {
                variance: noise_variance,
            },
            n,
        )
        .map(Self)
        .map_err(err)
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m()
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        to_list(self.0.theta.as_vector())
    }

    fn generator(&self, seed: u64) -> PyGenerator {
        PyGenerator {
            state: GeneratorState::new(&self.0, seed),
            scenario: self.0.clone(),
        }
    }
}

#[pyclass(name = "Generator", module = "diffusion_ls_py")]
struct PyGenerator {
    scenario: Scenario,
    state: GeneratorState,
}

#[pymethods]
impl PyGenerator {
    /// Draws the next observation of the stream.
    fn step(&mut self) -> PyResult<PyObservation> {
        model::generate_step(&self.scenario, &mut self.state)
            .map(PyObservation)
            .map_err(err)
    }

    #[getter]
    fn k(&self) -> usize {
        self.state.k()
    }
}

#[pyclass(name = "NodeState", module = "diffusion_ls_py", frozen)]
struct PyNodeState(NodeState);

#[pymethods]
impl PyNodeState {
    #[new]
    fn new(theta: Vec<f64>, p: Vec<Vec<f64>>) -> PyResult<Self> {
        NodeState::new(vector(theta), matrix(p)?).map(Self).map_err(err)
    }

    #[staticmethod]
    fn isotropic(m: usize, alpha0: f64) -> Self {
        Self(NodeState::isotropic(m, alpha0))
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        to_list(self.0.theta())
    }

    #[getter]
    fn p(&self) -> Vec<Vec<f64>> {
        to_rows(self.0.p())
    }

    #[getter]
    fn p_inv(&self) -> Vec<Vec<f64>> {
        to_rows(self.0.p_inv())
    }

    fn logdet_information(&self) -> PyResult<f64> {
        self.0.logdet_information().map_err(err)
    }

    fn adapt(&self, phi: Vec<f64>, y: f64) -> PyResult<PyAdaptOutput> {
        estimator::adapt(&self.0, &vector(phi), y)
            .map(PyAdaptOutput)
            .map_err(err)
    }
}

#[pyclass(name = "AdaptOutput", module = "diffusion_ls_py", frozen)]
struct PyAdaptOutput(AdaptOutput);

#[pymethods]
impl PyAdaptOutput {
    #[getter]
    fn theta_bar(&self) -> Vec<f64> {
        to_list(&self.0.theta_bar)
    }

    #[getter]
    fn pbar(&self) -> Vec<Vec<f64>> {
        to_rows(&self.0.pbar)
    }

    #[getter]
    fn pbar_inv(&self) -> Vec<Vec<f64>> {
        to_rows(&self.0.pbar_inv)
    }

    #[getter]
    fn gain(&self) -> f64 {
        self.0.gain
    }

    #[getter]
    fn phi_p_phi(&self) -> f64 {
        self.0.phi_p_phi
    }
}

#[pyclass(name = "CentralizedState", module = "diffusion_ls_py", frozen)]
struct PyCentralizedState(CentralizedState);

#[pymethods]
impl PyCentralizedState {
    #[staticmethod]
    fn isotropic(m: usize, alpha0: f64) -> Self {
        Self(CentralizedState::isotropic(m, alpha0))
    }

    #[getter]
    fn theta(&self) -> Vec<f64> {
        to_list(self.0.theta())
    }

    #[getter]
    fn p(&self) -> Vec<Vec<f64>> {
        to_rows(self.0.p())
    }

    fn step(&self, obs: PyRef<'_, PyObservation>) -> PyResult<Self> {
        estimator::centralized_step(&self.0, &obs.0)
            .map(Self)
            .map_err(err)
    }
}

#[pyfunction]
fn combine(adapted: Vec<PyRef<'_, PyAdaptOutput>>, weights: Vec<f64>) -> PyResult<PyNodeState> {
    let refs: Vec<&AdaptOutput> = adapted.iter().map(|a| &a.0).collect();
    estimator::combine(&refs, &weights).map(PyNodeState).map_err(err)
}

fn unwrap_states(states: &[PyRef<'_, PyNodeState>]) -> Vec<NodeState> {
    states.iter().map(|s| s.0.clone()).collect()
}

/// One adapt-then-combine step of the network. Returns `(states, adapted)`.
#[pyfunction]
#[pyo3(signature = (states, obs, topology, combine_rounds=1))]
fn step_network(
    states: Vec<PyRef<'_, PyNodeState>>,
    obs: PyRef<'_, PyObservation>,
    topology: PyRef<'_, PyTopology>,
    combine_rounds: usize,
) -> PyResult<(Vec<PyNodeState>, Vec<PyAdaptOutput>)> {
    let step = estimator::step_network(&unwrap_states(&states), &obs.0, &topology.0, combine_rounds).map_err(err)?;
    Ok((
        step.states.into_iter().map(PyNodeState).collect(),
        step.adapted.into_iter().map(PyAdaptOutput).collect(),
    ))
}

/// Independent recursive LS at every node.
#[pyfunction]
fn classical_step(states: Vec<PyRef<'_, PyNodeState>>, obs: PyRef<'_, PyObservation>) -> PyResult<Vec<PyNodeState>> {
    let step = estimator::classical_step(&unwrap_states(&states), &obs.0).map_err(err)?;
    Ok(step.states.into_iter().map(PyNodeState).collect())
}

#[pyfunction]
fn regret(phi: Vec<f64>, theta_true: Vec<f64>, theta_est: Vec<f64>) -> PyResult<f64> {
    analysis::regret(&vector(phi), &vector(theta_true), &vector(theta_est)).map_err(err)
}

#[pyfunction]
fn lyapunov_value(states: Vec<PyRef<'_, PyNodeState>>, theta_true: Vec<f64>) -> PyResult<f64> {
    analysis::lyapunov_value(&unwrap_states(&states), &vector(theta_true)).map_err(err)
}

#[pyclass(name = "ExcitationTracker", module = "diffusion_ls_py")]
struct PyExcitationTracker(ExcitationTracker);

#[pymethods]
impl PyExcitationTracker {
    #[new]
    fn new(p0_invs: Vec<Vec<Vec<f64>>>, topology: PyRef<'_, PyTopology>) -> PyResult<Self> {
        let mats = p0_invs.into_iter().map(matrix).collect::<PyResult<Vec<_>>>()?;
        ExcitationTracker::new(&mats, &topology.0).map(Self).map_err(err)
    }

    fn push(&mut self, phis: Vec<Vec<f64>>) -> PyResult<()> {
        let phis: Vec<DVector<f64>> = phis.into_iter().map(vector).collect();
        self.0.push(&phis).map_err(err)
    }

    /// `(r_t, lambda_min_coop)` for the steps pushed so far.
    fn stats(&self) -> (f64, f64) {
        let s = self.0.stats();
        (s.r_t, s.lambda_min_coop)
    }

    #[getter]
    fn steps(&self) -> usize {
        self.0.steps()
    }
}

/// Randomized check of one matrix inequality; returns the report as a dict.
#[pyfunction]
#[pyo3(signature = (lemma, draws=1000, dims=vec![1, 2, 3], nodes=vec![2, 3, 5], seed=0))]
fn lemma_suite<'py>(
    py: Python<'py>,
    lemma: &str,
    draws: usize,
    dims: Vec<usize>,
    nodes: Vec<usize>,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let kind: LemmaKind = lemma.parse().map_err(|e| PyValueError::new_err(format!("{e}")))?;
    let cfg = SuiteConfig {
        draws,
        dims,
        nodes,
        seed,
        ..SuiteConfig::default()
    };
    let report = run_lemma_suite(kind, &cfg).map_err(err)?;
    json_to_py(py, &report)
}

#[pyfunction]
fn lemma_ids() -> Vec<&'static str> {
    LemmaKind::ALL.iter().map(|k| k.id()).collect()
}

/// Parses and validates a config file; returns its main dimensions.
#[pyfunction]
fn validate_config<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let cfg = harness::validate_config(&path).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("n", cfg.n())?;
    d.set_item("m", cfg.m())?;
    d.set_item("horizon", cfg.horizon)?;
    d.set_item("runs", cfg.runs)?;
    d.set_item("algorithms", cfg.algorithms.iter().map(|a| a.id()).collect::<Vec<_>>())?;
    d.set_item("output_dir", cfg.output.dir.clone())?;
    Ok(d)
}

/// Runs an experiment config, optionally redirecting the output directory.
/// Releases the GIL while the Monte-Carlo runs execute.
#[pyfunction]
#[pyo3(signature = (path, output_dir=None, runs=None, horizon=None))]
fn run_experiment<'py>(
    py: Python<'py>,
    path: PathBuf,
    output_dir: Option<PathBuf>,
    runs: Option<usize>,
    horizon: Option<usize>,
) -> PyResult<Bound<'py, PyAny>> {
    let mut cfg = harness::validate_config(&path).map_err(err)?;
    if let Some(dir) = output_dir {
        cfg.output.dir = dir;
    }
    if let Some(r) = runs {
        cfg.runs = r;
    }
    if let Some(t) = horizon {
        cfg.horizon = t;
        cfg.record_cadence = harness::ExperimentConfig::default_cadence(t);
    }
    cfg.check().map_err(err)?;
    let summary = py.detach(|| harness::run_experiment(&cfg)).map_err(err)?;
    json_to_py(py, &summary)
}

#[pymodule]
fn diffusion_ls_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("DiffusionError", m.py().get_type::<DiffusionError>())?;
    m.add_class::<PyTopology>()?;
    m.add_class::<PyObservation>()?;
    m.add_class::<PyScenario>()?;
    m.add_class::<PyGenerator>()?;
    m.add_class::<PyNodeState>()?;
    m.add_class::<PyAdaptOutput>()?;
    m.add_class::<PyCentralizedState>()?;
    m.add_class::<PyExcitationTracker>()?;
    m.add_function(wrap_pyfunction!(combine, m)?)?;
    m.add_function(wrap_pyfunction!(step_network, m)?)?;
    m.add_function(wrap_pyfunction!(classical_step, m)?)?;
    m.add_function(wrap_pyfunction!(regret, m)?)?;
    m.add_function(wrap_pyfunction!(lyapunov_value, m)?)?;
    m.add_function(wrap_pyfunction!(lemma_suite, m)?)?;
    m.add_function(wrap_pyfunction!(lemma_ids, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
