//! Python bindings exposing the main types and operations: secret sharing,
//! noise decomposition, privacy accounting, pipeline planning, and the
//! end-to-end experiment runner.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use dpagg_core::accountant::{
    self, default_alpha_grid, AccountantConfig, GaussianCurve,
};
use dpagg_core::field::Field;
use dpagg_core::harness::{run_experiment as run_experiment_rs, SimConfig};
use dpagg_core::noise::NoisePlan as CorePlan;
use dpagg_core::pipeline::{self, ProfileSample, Resource, StageSpec, Workflow};
use dpagg_core::shamir::{self, SecretShare, SharingPolicy};

fn value_err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_resource(label: &str) -> PyResult<Resource> {
    match label {
        "c-comp" => Ok(Resource::ClientCompute),
        "comm" => Ok(Resource::Communication),
        "s-comp" => Ok(Resource::ServerCompute),
        other => Err(PyValueError::new_err(format!(
            "unknown resource {other:?}; expected c-comp, comm, or s-comp"
        ))),
    }
}

fn build_workflow(stages: Vec<(String, f64, f64, f64)>) -> PyResult<Workflow> {
    let specs: PyResult<Vec<StageSpec>> = stages
        .iter()
        .map(|(label, b1, b2, b3)| {
            StageSpec::new(parse_resource(label)?, *b1, *b2, *b3).map_err(value_err)
        })
        .collect();
    Workflow::new(specs?).map_err(value_err)
}

/// Shamir t-out-of-n sharing of a field element; returns (holder, value)
/// pairs.
#[pyfunction]
fn share(secret: u64, threshold: u32, participant_ids: Vec<u64>, seed: u64) -> PyResult<Vec<(u64, u64)>> {
    let field = Field::default();
    let policy = SharingPolicy::new(threshold, participant_ids.into_iter().collect())
        .map_err(value_err)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    Ok(shamir::share(&field, field.elem(secret), &policy, &mut rng)
        .into_iter()
        .map(|s| (s.holder_index, s.value.value()))
        .collect())
}

/// Lagrange reconstruction at zero from (holder, value) pairs.
#[pyfunction]
fn reconstruct(shares: Vec<(u64, u64)>, threshold: u32) -> PyResult<u64> {
    let field = Field::default();
    let shares: Vec<SecretShare> = shares
        .into_iter()
        .map(|(holder_index, value)| SecretShare {
            holder_index,
            value: field.elem(value),
        })
        .collect();
    shamir::reconstruct(&field, &shares, threshold)
        .map(|v| v.value())
        .map_err(value_err)
}

/// Target variance and tolerances for one aggregation round.
#[pyclass]
struct NoisePlan {
    inner: CorePlan,
}

#[pymethods]
impl NoisePlan {
    #[new]
    #[pyo3(signature = (sigma_sq_star, u_size, dropout_tolerance, collusion_tolerance=0, threshold=None, handle_collusion=false))]
    fn new(
        sigma_sq_star: f64,
        u_size: u32,
        dropout_tolerance: u32,
        collusion_tolerance: u32,
        threshold: Option<u32>,
        handle_collusion: bool,
    ) -> PyResult<Self> {
        let inner = CorePlan::new(
            sigma_sq_star,
            u_size,
            dropout_tolerance,
            collusion_tolerance,
            threshold.unwrap_or(u_size),
            handle_collusion,
        )
        .map_err(value_err)?;
        Ok(NoisePlan { inner })
    }

    fn inflation(&self) -> f64 {
        self.inner.inflation()
    }

    /// The T+1 per-component variances.
    fn component_variances(&self) -> Vec<f64> {
        self.inner.component_variances().0
    }

    fn excess_level(&self, dropped: u32) -> PyResult<f64> {
        self.inner.excess_level(dropped).map_err(value_err)
    }

    fn per_survivor_excess(&self, dropped: u32) -> PyResult<f64> {
        self.inner.per_survivor_excess(dropped).map_err(value_err)
    }

    fn removal_indices(&self, dropped: u32) -> PyResult<Vec<u32>> {
        Ok(self
            .inner
            .removal_indices(dropped)
            .map_err(value_err)?
            .collect())
    }

    fn post_removal_variance(&self, dropped: u32) -> PyResult<f64> {
        self.inner.post_removal_variance(dropped).map_err(value_err)
    }
}

/// Sampled-mechanism privacy bound for a Gaussian curve.
#[pyfunction]
#[pyo3(signature = (alpha, gamma, sigma, sensitivity=1.0))]
fn hetero_poisson_bound(alpha: u32, gamma: f64, sigma: f64, sensitivity: f64) -> PyResult<f64> {
    accountant::hetero_poisson_bound(alpha, gamma, &GaussianCurve::new(sigma, sensitivity))
        .map_err(value_err)
}

/// RDP-to-DP translation over an order grid.
#[pyfunction]
fn rdp_to_dp(alpha_grid: Vec<u32>, rdp: Vec<f64>, delta: f64) -> PyResult<f64> {
    accountant::rdp_to_dp(&alpha_grid, &rdp, delta).map_err(value_err)
}

/// Minimum noise variance meeting the (epsilon, delta) budget over the
/// given horizon.
#[pyfunction]
#[pyo3(signature = (epsilon, delta, gamma, rounds, sensitivity=1.0))]
fn plan_noise(epsilon: f64, delta: f64, gamma: f64, rounds: u32, sensitivity: f64) -> PyResult<f64> {
    let config = AccountantConfig::new(gamma, rounds, epsilon, delta).map_err(value_err)?;
    accountant::plan_noise(&config, |v| GaussianCurve::from_variance(v, sensitivity))
        .map_err(value_err)
}

/// Cumulative translated epsilon per round, given each round's achieved
/// fraction of the target noise variance.
#[pyfunction]
#[pyo3(signature = (epsilon, delta, gamma, sigma_sq_star, fractions, sensitivity=1.0))]
fn spend_trace(
    epsilon: f64,
    delta: f64,
    gamma: f64,
    sigma_sq_star: f64,
    fractions: Vec<f64>,
    sensitivity: f64,
) -> PyResult<Vec<f64>> {
    let config = AccountantConfig::new(gamma, fractions.len().max(1) as u32, epsilon, delta)
        .map_err(value_err)?;
    accountant::spend_trace(&config, sigma_sq_star, &fractions, |v| {
        GaussianCurve::from_variance(v, sensitivity)
    })
    .map_err(value_err)
}

/// Per-chunk latency of one stage: beta1 * ceil(d/m) + beta2 * m + beta3.
#[pyfunction]
fn stage_latency(resource: &str, beta1: f64, beta2: f64, beta3: f64, d: u64, m: u32) -> PyResult<f64> {
    let spec = StageSpec::new(parse_resource(resource)?, beta1, beta2, beta3).map_err(value_err)?;
    Ok(pipeline::stage_latency(&spec, d, m))
}

/// Full schedule for `m` chunks; stages are (resource, beta1, beta2, beta3)
/// tuples. Returns {"completion": .., "entries": [...]}.
#[pyfunction]
fn schedule<'py>(
    py: Python<'py>,
    stages: Vec<(String, f64, f64, f64)>,
    d: u64,
    m: u32,
) -> PyResult<Bound<'py, PyDict>> {
    let workflow = build_workflow(stages)?;
    let plan = pipeline::schedule(&workflow, d, m).map_err(value_err)?;
    let out = PyDict::new(py);
    out.set_item("chunks", plan.chunk_count)?;
    out.set_item("completion", plan.completion)?;
    let entries: Vec<Bound<'py, PyDict>> = plan
        .entries
        .iter()
        .map(|e| {
            let entry = PyDict::new(py);
            entry.set_item("stage", e.stage)?;
            entry.set_item("chunk", e.chunk)?;
            entry.set_item(
                "resource",
                match e.resource {
                    Resource::ClientCompute => "c-comp",
                    Resource::Communication => "comm",
                    Resource::ServerCompute => "s-comp",
                },
            )?;
            entry.set_item("begin", e.begin)?;
            entry.set_item("finish", e.finish)?;
            Ok(entry)
        })
        .collect::<PyResult<_>>()?;
    out.set_item("entries", entries)?;
    Ok(out)
}

/// Fastest chunk count up to m_max; returns (m_star, completion).
#[pyfunction]
#[pyo3(signature = (stages, d, m_max=20))]
fn optimal_chunks(stages: Vec<(String, f64, f64, f64)>, d: u64, m_max: u32) -> PyResult<(u32, f64)> {
    let workflow = build_workflow(stages)?;
    let (m, plan) = pipeline::optimal_chunks(&workflow, d, m_max).map_err(value_err)?;
    Ok((m, plan.completion))
}

/// Least-squares beta fit from (d, m, latency) samples.
#[pyfunction]
fn fit_betas(samples: Vec<(u64, u32, f64)>) -> PyResult<(f64, f64, f64)> {
    let samples: Vec<ProfileSample> = samples
        .into_iter()
        .map(|(d, m, latency)| ProfileSample { d, m, latency })
        .collect();
    pipeline::fit_betas(&samples).map_err(value_err)
}

/// Nearly-even split of a vector into m chunks.
#[pyfunction]
fn chunk_vector(values: Vec<u64>, m: u32) -> Vec<Vec<u64>> {
    pipeline::chunk_vector(&values, m)
}

/// Runs a full experiment from a TOML config string; returns the JSON-lines
/// records (rounds first, summary last).
#[pyfunction]
#[pyo3(signature = (config_toml, parallel=false))]
fn run_experiment(config_toml: &str, parallel: bool) -> PyResult<Vec<String>> {
    let config = SimConfig::from_toml(config_toml).map_err(value_err)?;
    let mut buf: Vec<u8> = Vec::new();
    run_experiment_rs(&config, parallel, &mut buf)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    let text = String::from_utf8(buf).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(text.lines().map(str::to_owned).collect())
}

#[pymodule]
fn dpagg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<NoisePlan>()?;
    m.add_function(wrap_pyfunction!(share, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(hetero_poisson_bound, m)?)?;
    m.add_function(wrap_pyfunction!(rdp_to_dp, m)?)?;
    m.add_function(wrap_pyfunction!(plan_noise, m)?)?;
    m.add_function(wrap_pyfunction!(spend_trace, m)?)?;
    m.add_function(wrap_pyfunction!(stage_latency, m)?)?;
    m.add_function(wrap_pyfunction!(schedule, m)?)?;
    m.add_function(wrap_pyfunction!(optimal_chunks, m)?)?;
    m.add_function(wrap_pyfunction!(fit_betas, m)?)?;
    m.add_function(wrap_pyfunction!(chunk_vector, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("DEFAULT_ALPHA_GRID", default_alpha_grid())?;
    Ok(())
}
