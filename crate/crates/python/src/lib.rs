//! Python bindings for `freqest_core`.
//!
//! Build with `cargo build -p freqest-py --release --features extension-module`
//! and copy `libfreqest.so` to `freqest.so` somewhere on `sys.path`.

use freqest_core as core;
use freqest_core::{
    CostKind, CostModel, DataHistory, ErrorNormalization, ExperimentRecord, LikelihoodModel, Outcome,
    ParticleEnsemble, ResampleConfig, RunConfig, ScalingCurve, StrategyConfig, StrategyKind, Support,
    TerminalStatus, TrueSystem,
};
use pyo3::exceptions::{PyOverflowError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn to_py(e: core::Error) -> PyErr {
    match e {
        core::Error::Domain(_) | core::Error::Config(_) | core::Error::Fit(_) => PyValueError::new_err(e.to_string()),
        core::Error::Overflow(_) => PyOverflowError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

#[pyclass(name = "LikelihoodModel", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyLikelihoodModel {
    inner: LikelihoodModel,
}

#[pymethods]
impl PyLikelihoodModel {
    #[new]
    #[pyo3(signature = (coherence_time=None))]
    fn new(coherence_time: Option<f64>) -> PyResult<Self> {
        Ok(Self { inner: LikelihoodModel::new(coherence_time).map_err(to_py)? })
    }

    #[getter]
    fn coherence_time(&self) -> Option<f64> {
        self.inner.coherence_time()
    }

    /// P(outcome | omega, t) for outcome 0 or 1.
    fn likelihood(&self, outcome: u8, omega: f64, t: f64) -> PyResult<f64> {
        let x = Outcome::from_bit(outcome).map_err(to_py)?;
        self.inner.likelihood(x, omega, t).map_err(to_py)
    }

    fn visibility(&self, t: f64) -> f64 {
        self.inner.visibility(t)
    }

    fn __repr__(&self) -> String {
        match self.inner.coherence_time() {
            Some(t) => format!("LikelihoodModel(coherence_time={t})"),
            None => "LikelihoodModel()".into(),
        }
    }
}

#[pyclass(name = "ExperimentRecord", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyExperimentRecord {
    inner: ExperimentRecord,
}

#[pymethods]
impl PyExperimentRecord {
    #[new]
    fn new(time: f64, shots: u32, ones: u32) -> PyResult<Self> {
        Ok(Self { inner: ExperimentRecord::new(time, shots, ones).map_err(to_py)? })
    }

    #[getter]
    fn time(&self) -> f64 {
        self.inner.time
    }

    #[getter]
    fn shots(&self) -> u32 {
        self.inner.shots
    }

    #[getter]
    fn ones(&self) -> u32 {
        self.inner.ones
    }

    fn __repr__(&self) -> String {
        format!("ExperimentRecord(time={}, shots={}, ones={})", self.inner.time, self.inner.shots, self.inner.ones)
    }
}

#[pyclass(name = "ParticleEnsemble", frozen, skip_from_py_object)]
#[derive(Clone)]
pub struct PyParticleEnsemble {
    inner: ParticleEnsemble,
}

#[pymethods]
impl PyParticleEnsemble {
    /// Weights default to uniform and are normalized.
    #[new]
    #[pyo3(signature = (locations, weights=None))]
    fn new(locations: Vec<f64>, weights: Option<Vec<f64>>) -> PyResult<Self> {
        let inner = match weights {
            Some(w) => ParticleEnsemble::new(locations, w),
            None => ParticleEnsemble::equally_weighted(locations),
        }
        .map_err(to_py)?;
        Ok(Self { inner })
    }

    /// `k` particles drawn uniformly from the prior support ]0, π/2].
    #[staticmethod]
    #[pyo3(signature = (k, seed=0))]
    fn prior(k: usize, seed: u64) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self { inner: ParticleEnsemble::init_prior(k, Support::default(), &mut rng).map_err(to_py)? })
    }

    #[getter]
    fn locations(&self) -> Vec<f64> {
        self.inner.locations().to_vec()
    }

    #[getter]
    fn weights(&self) -> Vec<f64> {
        self.inner.weights().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn ess(&self) -> f64 {
        self.inner.ess()
    }

    /// `(mean, std)` of the weighted ensemble.
    fn mean_std(&self) -> (f64, f64) {
        self.inner.mean_std()
    }

    fn bayes_update(&self, model: &PyLikelihoodModel, record: &PyExperimentRecord) -> PyResult<Self> {
        Ok(Self { inner: self.inner.bayes_update(&model.inner, &record.inner).map_err(to_py)? })
    }

    /// Resample-move if ESS is below the threshold; returns `(ensemble, resampled)`.
    #[pyo3(signature = (history, model, seed=0, ess_threshold=0.5, mh_steps=2, proposal_scale=0.1))]
    fn maybe_resample(
        &self,
        history: Vec<PyRef<'_, PyExperimentRecord>>,
        model: &PyLikelihoodModel,
        seed: u64,
        ess_threshold: f64,
        mh_steps: u32,
        proposal_scale: f64,
    ) -> PyResult<(Self, bool)> {
        let cfg = ResampleConfig { ess_threshold_fraction: ess_threshold, mh_steps, proposal_scale };
        cfg.validate().map_err(to_py)?;
        let h: DataHistory = history.iter().map(|r| r.inner).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = self.inner.maybe_resample(&h, &model.inner, Support::default(), &cfg, &mut rng);
        Ok((Self { inner: out.ensemble }, out.resampled))
    }

    fn __repr__(&self) -> String {
        let (m, s) = self.inner.mean_std();
        format!("ParticleEnsemble(k={}, mean={m:.6}, std={s:.3e})", self.inner.len())
    }
}

/// Negative expected posterior variance after a single shot at `t`.
#[pyfunction]
fn expected_variance_utility(ensemble: &PyParticleEnsemble, model: &PyLikelihoodModel, t: f64) -> f64 {
    core::expected_variance_utility(&ensemble.inner, &model.inner, t)
}

fn status_name(s: TerminalStatus) -> &'static str {
    match s {
        TerminalStatus::BudgetReached => "budget_reached",
        TerminalStatus::MaxExperiments => "max_experiments",
        TerminalStatus::Degenerate => "degenerate",
    }
}

/// One estimation run. Returns a dict with the per-step columns as lists.
#[pyfunction]
#[pyo3(signature = (
    strategy, omega, coherence_time=None, particles=2000, cet_budget=1e4, seed=0,
    heuristic_multiplier=None, rts_cap=None, max_experiments=1_000_000
))]
#[allow(clippy::too_many_arguments)]
fn run_estimation<'py>(
    py: Python<'py>,
    strategy: &str,
    omega: f64,
    coherence_time: Option<f64>,
    particles: usize,
    cet_budget: f64,
    seed: u64,
    heuristic_multiplier: Option<f64>,
    rts_cap: Option<f64>,
    max_experiments: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let kind: StrategyKind = strategy.parse().map_err(to_py)?;
    let mut s = StrategyConfig::for_kind(kind);
    if let Some(c) = heuristic_multiplier {
        s.heuristic_multiplier = c;
    }
    s.rts_cap = rts_cap;
    let model = LikelihoodModel::new(coherence_time).map_err(to_py)?;
    let system = TrueSystem::new(omega, model).map_err(to_py)?;
    let cfg = RunConfig { particles, cet_budget, max_experiments, ..RunConfig::new(s, seed) };
    let trace = py.detach(|| core::run_estimation(&system, &cfg)).map_err(to_py)?;

    let d = PyDict::new(py);
    d.set_item("omega_true", trace.omega_true)?;
    d.set_item("initial_std", trace.initial_std)?;
    d.set_item("terminal_status", status_name(trace.terminal_status))?;
    d.set_item("diagnostic", trace.diagnostic.clone())?;
    let col = |f: fn(&core::TraceStep) -> f64| trace.steps.iter().map(f).collect::<Vec<f64>>();
    d.set_item("cet", col(|s| s.cet))?;
    d.set_item("t_chosen", col(|s| s.t_chosen))?;
    d.set_item("estimate", col(|s| s.estimate))?;
    d.set_item("std", col(|s| s.std))?;
    d.set_item("ess", col(|s| s.ess))?;
    d.set_item("shots", trace.steps.iter().map(|s| s.shots).collect::<Vec<_>>())?;
    d.set_item("ones", trace.steps.iter().map(|s| s.ones).collect::<Vec<_>>())?;
    d.set_item("n_experiments", trace.steps.iter().map(|s| s.n_experiments).collect::<Vec<_>>())?;
    Ok(d)
}

/// Classical processing cost of `kind` in elementary operations.
#[pyfunction]
#[pyo3(name = "predicted_cost", signature = (kind, k, m, n))]
fn predicted_cost_py(kind: &str, k: u64, m: u64, n: u64) -> PyResult<u128> {
    let kind: CostKind = kind.parse().map_err(to_py)?;
    CostModel::new(k, m, n).map_err(to_py)?.predicted_cost(kind).map_err(to_py)
}

/// `{kind: cost}` for every kind; overflowing entries map to `None`.
#[pyfunction]
fn cost_table<'py>(py: Python<'py>, k: u64, m: u64, n: u64) -> PyResult<Bound<'py, PyDict>> {
    let model = CostModel::new(k, m, n).map_err(to_py)?;
    let d = PyDict::new(py);
    for (kind, cost) in model.table() {
        d.set_item(kind.name(), cost.ok())?;
    }
    Ok(d)
}

/// Least-squares power law through the last `window` fraction of points.
#[pyfunction]
#[pyo3(signature = (cet, rmse, window=0.8))]
fn fit_loglog<'py>(py: Python<'py>, cet: Vec<f64>, rmse: Vec<f64>, window: f64) -> PyResult<Bound<'py, PyDict>> {
    if cet.len() != rmse.len() {
        return Err(PyValueError::new_err("cet and rmse must have the same length"));
    }
    let curve = ScalingCurve::from_pairs(cet.into_iter().zip(rmse));
    let fit = core::fit_loglog(&curve, window).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("exponent", fit.exponent)?;
    d.set_item("multiplier", fit.multiplier)?;
    d.set_item("residual", fit.residual)?;
    d.set_item("points_used", fit.points_used)?;
    Ok(d)
}

/// Error of `estimate` under the chosen normalization
/// (`relative`, `domain_width` or `absolute`).
#[pyfunction]
#[pyo3(signature = (estimate, omega_true, normalization="relative"))]
fn normalized_error(estimate: f64, omega_true: f64, normalization: &str) -> PyResult<f64> {
    let n = match normalization {
        "relative" => ErrorNormalization::Relative,
        "domain_width" => ErrorNormalization::DomainWidth,
        "absolute" => ErrorNormalization::Absolute,
        other => return Err(PyValueError::new_err(format!("unknown normalization '{other}'"))),
    };
    Ok(core::normalized_error(estimate, omega_true, n))
}

#[pymodule]
fn freqest(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLikelihoodModel>()?;
    m.add_class::<PyExperimentRecord>()?;
    m.add_class::<PyParticleEnsemble>()?;
    m.add_function(wrap_pyfunction!(expected_variance_utility, m)?)?;
    m.add_function(wrap_pyfunction!(run_estimation, m)?)?;
    m.add_function(wrap_pyfunction!(predicted_cost_py, m)?)?;
    m.add_function(wrap_pyfunction!(cost_table, m)?)?;
    m.add_function(wrap_pyfunction!(fit_loglog, m)?)?;
    m.add_function(wrap_pyfunction!(normalized_error, m)?)?;
    m.add("STRATEGIES", StrategyKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>())?;
    Ok(())
}
