//! Python bindings for `nilmdp`.
//!
//! States travel as lists of slots, each a list of per-appliance values.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use nilmdp::bounds::{self, BoundReport, MultiShotInputs, MultiShotVariant, RipInterpretation};
use nilmdp::experiment::{self, SweepConfig};
use nilmdp::{data, hierarchy, inference, mechanisms, solver};
use nilmdp::{AppliancePowerVector, DpConfig, Mechanism, MeterSeries, SensitivityParams, StateMatrix, StateVector};

fn err(e: nilmdp::Error) -> PyErr {
    match e {
        nilmdp::Error::Io(_) | nilmdp::Error::Format { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = nilmdp::Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(err)
}

fn fleet(powers: Vec<f64>) -> PyResult<AppliancePowerVector> {
    AppliancePowerVector::new(powers).map_err(err)
}

fn matrix(rows: Vec<Vec<f64>>, ground_truth: bool) -> PyResult<StateMatrix> {
    let columns = rows.into_iter().map(StateVector::new).collect::<nilmdp::Result<Vec<_>>>().map_err(err)?;
    StateMatrix::new(columns, ground_truth).map_err(err)
}

fn rows(m: &StateMatrix) -> Vec<Vec<f64>> {
    m.columns().iter().map(|c| c.values().to_vec()).collect()
}

/// Appliance powers with names.
#[pyclass(name = "Fleet", frozen)]
struct PyFleet {
    inner: AppliancePowerVector,
}

#[pymethods]
impl PyFleet {
    #[new]
    #[pyo3(signature = (powers, names=None))]
    fn new(powers: Vec<f64>, names: Option<Vec<String>>) -> PyResult<Self> {
        let inner = match names {
            Some(n) => AppliancePowerVector::with_names(powers, n),
            None => AppliancePowerVector::new(powers),
        }
        .map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn powers(&self) -> Vec<f64> {
        self.inner.powers().to_vec()
    }

    #[getter]
    fn names(&self) -> Vec<String> {
        self.inner.names().to_vec()
    }

    #[getter]
    fn l2_norm(&self) -> f64 {
        self.inner.l2_norm()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Fleet({:?})", self.inner.powers())
    }
}

/// Output of multi-shot or hierarchical inference.
#[pyclass(name = "InferenceResult", frozen, get_all)]
struct PyInferenceResult {
    states: Vec<Vec<f64>>,
    switch_probs: Vec<Vec<f64>>,
    corrections_applied: Vec<usize>,
    saturated_steps: Vec<usize>,
}

#[pymethods]
impl PyInferenceResult {
    fn __repr__(&self) -> String {
        format!(
            "InferenceResult(horizon={}, saturated={})",
            self.states.len(),
            self.saturated_steps.len()
        )
    }
}

impl From<inference::InferenceResult> for PyInferenceResult {
    fn from(r: inference::InferenceResult) -> Self {
        Self {
            states: rows(&r.states),
            switch_probs: r.switch_probs.into_iter().map(|s| s.into_inner()).collect(),
            corrections_applied: r.corrections_applied,
            saturated_steps: r.saturated_steps,
        }
    }
}

/// Relaxed switch vector for a jump of `k` watts. Returns `(delta_star, objective)`.
#[pyfunction]
fn solve_l1(powers: Vec<f64>, k: f64, delta: f64) -> PyResult<(Vec<f64>, f64)> {
    let s = solver::solve_l1_boxed(&fleet(powers)?, k, delta).map_err(err)?;
    Ok((s.delta_star.into_inner(), s.objective))
}

/// One-step inference between two readings. Returns `(relaxed, rounded, saturated)`.
#[pyfunction]
#[pyo3(signature = (powers, y_prev, y_curr, delta, u_max=1, seed=0))]
fn one_shot(
    powers: Vec<f64>,
    y_prev: f64,
    y_curr: f64,
    delta: f64,
    u_max: usize,
    seed: u64,
) -> PyResult<(Vec<f64>, Vec<f64>, bool)> {
    let sens = SensitivityParams::new(delta, u_max).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (out, sat) = inference::one_shot_infer_saturating(&fleet(powers)?, y_prev, y_curr, &sens, &mut rng)
        .map_err(err)?;
    Ok((out.solution.delta_star.into_inner(), out.rounded.into_inner(), sat))
}

#[pyfunction]
#[pyo3(signature = (readings, epsilon, delta_f, mechanism="laplace", seed=0))]
fn inject_noise(readings: Vec<f64>, epsilon: f64, delta_f: f64, mechanism: &str, seed: u64) -> PyResult<Vec<f64>> {
    let dp = DpConfig::new(epsilon, delta_f, parse::<Mechanism>(mechanism)?, seed).map_err(err)?;
    let series = MeterSeries::new(readings).map_err(err)?;
    Ok(mechanisms::inject_noise(&series, &dp).map_err(err)?.readings().to_vec())
}

fn run_inference(
    hierarchical: bool,
    x0: Vec<f64>,
    readings: Vec<f64>,
    powers: Vec<f64>,
    delta: f64,
    u_max: usize,
    seed: u64,
    tolerance: Option<f64>,
) -> PyResult<PyInferenceResult> {
    let p = fleet(powers)?;
    let sens = SensitivityParams::new(delta, u_max).map_err(err)?;
    let x0 = StateVector::new(x0).map_err(err)?;
    let y = MeterSeries::new(readings).map_err(err)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tol = tolerance.unwrap_or(delta);
    let r = if hierarchical {
        hierarchy::hierarchical_infer(&x0, &y, &p, &sens, &mut rng, tol)
    } else {
        inference::multi_shot_infer(&x0, &y, &p, &sens, &mut rng, tol)
    };
    Ok(r.map_err(err)?.into())
}

/// Multi-shot inference over readings `y_0..y_T` from binary initial state `x0`.
#[pyfunction]
#[pyo3(signature = (x0, readings, powers, delta, u_max=1, seed=0, tolerance=None))]
fn multi_shot(
    x0: Vec<f64>,
    readings: Vec<f64>,
    powers: Vec<f64>,
    delta: f64,
    u_max: usize,
    seed: u64,
    tolerance: Option<f64>,
) -> PyResult<PyInferenceResult> {
    run_inference(false, x0, readings, powers, delta, u_max, seed, tolerance)
}

#[pyfunction]
#[pyo3(signature = (x0, readings, powers, delta, u_max=1, seed=0, tolerance=None))]
fn hierarchical(
    x0: Vec<f64>,
    readings: Vec<f64>,
    powers: Vec<f64>,
    delta: f64,
    u_max: usize,
    seed: u64,
    tolerance: Option<f64>,
) -> PyResult<PyInferenceResult> {
    run_inference(true, x0, readings, powers, delta, u_max, seed, tolerance)
}

/// Member indices of each hierarchy, largest powers first.
#[pyfunction]
fn decompose(powers: Vec<f64>, delta: f64, u_max: usize) -> PyResult<Vec<Vec<usize>>> {
    let hs = hierarchy::decompose(&fleet(powers)?, delta, u_max);
    Ok(hs.into_iter().map(|h| h.member_indices).collect())
}

#[pyfunction]
fn accuracy(states: Vec<Vec<f64>>, truth: Vec<Vec<f64>>) -> PyResult<f64> {
    inference::accuracy_multi_shot(&matrix(states, false)?, &matrix(truth, true)?).map_err(err)
}

#[pyfunction]
fn sparsity(states: Vec<Vec<f64>>) -> PyResult<f64> {
    data::sparsity(&matrix(states, true)?).map_err(err)
}

/// `C(P)`, or `None` where undefined.
#[pyfunction]
#[pyo3(signature = (powers, u_max=1, rip="subset-norm"))]
fn c_of_p(powers: Vec<f64>, u_max: usize, rip: &str) -> PyResult<Option<f64>> {
    let c = bounds::c_of_p(&fleet(powers)?, u_max, parse::<RipInterpretation>(rip)?, None).map_err(err)?;
    Ok(c.computed)
}

fn report<'py>(py: Python<'py>, r: &BoundReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("lower", r.lower)?;
    d.set_item("upper", r.upper)?;
    d.set_item("clamped_lower", r.clamped_lower)?;
    d.set_item("clamped_upper", r.clamped_upper)?;
    d.set_item("intermediates", r.intermediates.clone())?;
    Ok(d)
}

#[pyfunction]
fn one_shot_bounds<'py>(
    py: Python<'py>,
    delta: f64,
    epsilon: f64,
    n: usize,
    c: f64,
    p_norm: f64,
) -> PyResult<Bound<'py, PyDict>> {
    report(py, &bounds::one_shot_bounds(delta, epsilon, n, c, p_norm))
}

#[pyfunction]
#[pyo3(signature = (delta, epsilon, n, horizon, c, p_norm, variant="as-stated"))]
fn multi_shot_bounds<'py>(
    py: Python<'py>,
    delta: f64,
    epsilon: f64,
    n: usize,
    horizon: usize,
    c: f64,
    p_norm: f64,
    variant: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let inputs = MultiShotInputs {
        delta,
        epsilon,
        n,
        horizon,
        c,
        p_norm,
    };
    let r = bounds::multi_shot_bounds(&inputs, parse::<MultiShotVariant>(variant)?).map_err(err)?;
    report(py, &r)
}

/// Synthetic trace. Returns a dict with `states` (T+1 slots), `meter` and `samples`.
#[pyfunction]
#[pyo3(signature = (powers, horizon, target_sparsity=0.9, seed=0, jitter=0.0))]
fn synthesize<'py>(
    py: Python<'py>,
    powers: Vec<f64>,
    horizon: usize,
    target_sparsity: f64,
    seed: u64,
    jitter: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let mut cfg = data::SynthConfig::new(fleet(powers)?, horizon, target_sparsity, seed);
    cfg.consumption_jitter = jitter;
    let syn = data::synthesize(&cfg, &mut ChaCha8Rng::seed_from_u64(seed)).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("states", rows(&syn.states))?;
    d.set_item("meter", syn.meter.readings().to_vec())?;
    d.set_item("samples", syn.trace.samples.clone())?;
    Ok(d)
}

/// Monte Carlo ε sweep. `config` takes the same keys as a sweep config file.
#[pyfunction]
fn sweep<'py>(py: Python<'py>, config: BTreeMap<String, Bound<'py, PyAny>>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let mut map = BTreeMap::new();
    for (k, v) in config {
        let text = match v.extract::<Vec<f64>>() {
            Ok(list) => list.iter().map(f64::to_string).collect::<Vec<_>>().join(","),
            Err(_) => v.str()?.to_string(),
        };
        map.insert(k, text);
    }
    let cfg = SweepConfig::from_map(&map).map_err(err)?;
    let result = py.detach(|| experiment::run_sweep(&cfg)).map_err(err)?;
    result
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("epsilon", r.epsilon)?;
            d.set_item("ln_inv_epsilon", r.ln_inv_epsilon)?;
            d.set_item("mean_accuracy", r.mean_accuracy)?;
            d.set_item("std_accuracy", r.std_accuracy)?;
            d.set_item("lower_bound", r.clamped_lower)?;
            d.set_item("upper_bound", r.clamped_upper)?;
            d.set_item("trials", r.trials)?;
            Ok(d)
        })
        .collect()
}

#[pymodule]
fn nilmdp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFleet>()?;
    m.add_class::<PyInferenceResult>()?;

    m.add_function(wrap_pyfunction!(solve_l1, m)?)?;
    m.add_function(wrap_pyfunction!(one_shot, m)?)?;
    m.add_function(wrap_pyfunction!(multi_shot, m)?)?;
    m.add_function(wrap_pyfunction!(hierarchical, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(inject_noise, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(sparsity, m)?)?;

    m.add_function(wrap_pyfunction!(c_of_p, m)?)?;
    m.add_function(wrap_pyfunction!(one_shot_bounds, m)?)?;
    m.add_function(wrap_pyfunction!(multi_shot_bounds, m)?)?;

    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(sweep, m)?)?;

    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
