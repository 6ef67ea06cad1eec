//! Python bindings for the ITA simulator.
//!
//! Reports are returned as JSON strings; decode them with `json.loads`.

use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use ita_core::attention::{multi_head_attention, AttentionOptions};
use ita_core::harness::{self, ExperimentSpec, InputDistribution, SuiteOptions};
use ita_core::manifest::load_problem;
use ita_core::perf::{self, simulate_perf};
use ita_core::schedule::{build_schedule, ScheduleOptions, SoftmaxTiming};
use ita_core::softmax;
use ita_core::{ItaError, RequantParams, SoftmaxConstants};

fn py_err(e: ItaError) -> PyErr {
    match e.exit_code() {
        2 => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Design-time accelerator parameters.
#[pyclass(name = "AcceleratorConfig", module = "ita_sim", skip_from_py_object)]
#[derive(Clone)]
pub struct PyAcceleratorConfig {
    inner: ita_core::AcceleratorConfig,
}

#[pymethods]
impl PyAcceleratorConfig {
    #[new]
    #[pyo3(signature = (n=16, m=64, d=24, freq_hz=500e6, divider_latency_cycles=16, divider_count=2))]
    fn new(n: u32, m: u32, d: u32, freq_hz: f64, divider_latency_cycles: u32, divider_count: u32) -> PyResult<Self> {
        let inner = ita_core::AcceleratorConfig {
            n,
            m,
            d,
            freq_hz,
            divider_latency_cycles,
            divider_count,
            ..Default::default()
        };
        inner.validate().map_err(py_err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn n(&self) -> u32 {
        self.inner.n
    }

    #[getter]
    fn m(&self) -> u32 {
        self.inner.m
    }

    #[getter]
    fn d(&self) -> u32 {
        self.inner.d
    }

    #[getter]
    fn freq_hz(&self) -> f64 {
        self.inner.freq_hz
    }

    fn bandwidth_ws(&self) -> u64 {
        perf::bandwidth_weight_stationary(&self.inner)
    }

    fn bandwidth_os(&self) -> u64 {
        perf::bandwidth_output_stationary(&self.inner)
    }

    fn weight_buffer_bytes(&self) -> u64 {
        perf::weight_buffer_size(&self.inner)
    }

    fn peak_tops(&self) -> f64 {
        self.inner.peak_tops()
    }

    fn max_inner_dim(&self) -> usize {
        self.inner.max_inner_dim()
    }

    fn __repr__(&self) -> String {
        let c = &self.inner;
        format!("AcceleratorConfig(n={}, m={}, d={}, freq_hz={})", c.n, c.m, c.d, c.freq_hz)
    }
}

fn cfg_or_default(cfg: Option<PyRef<'_, PyAcceleratorConfig>>) -> ita_core::AcceleratorConfig {
    cfg.map(|c| c.inner.clone()).unwrap_or_default()
}

/// Requantize one accumulator value to int8.
#[pyfunction]
fn requantize(acc: i32, multiplier: u8, right_shift: u8) -> PyResult<i8> {
    let p = RequantParams::new(multiplier, right_shift, 1.0).map_err(py_err)?;
    Ok(ita_core::quant::requantize(acc, &p))
}

/// Streaming integer softmax of one row of int8 codes; returns uint8 codes
/// where 255 stands for probability one.
#[pyfunction]
#[pyo3(signature = (row, part_width=64))]
fn softmax_row(row: Vec<i8>, part_width: usize) -> PyResult<Vec<u16>> {
    let out = softmax::softmax_row_streaming(&row, part_width, SoftmaxConstants::default()).map_err(py_err)?;
    Ok(widen(out))
}

fn widen(codes: Vec<u8>) -> Vec<u16> {
    codes.into_iter().map(u16::from).collect()
}

/// Single-pass integer softmax with the row maximum known upfront.
#[pyfunction]
fn softmax_row_oracle(row: Vec<i8>) -> PyResult<Vec<u16>> {
    Ok(widen(softmax::softmax_row_integer_oracle(&row, SoftmaxConstants::default()).map_err(py_err)?))
}

/// Real-valued softmax of the same codes.
#[pyfunction]
fn softmax_row_float(row: Vec<i8>) -> Vec<f64> {
    softmax::softmax_row_float_oracle(&row, SoftmaxConstants::default())
}

/// Cycle, bandwidth and throughput report for `dims` ("SxExPxH") as JSON.
#[pyfunction]
#[pyo3(signature = (dims, config=None, softmax_overlap=true))]
fn perf_report(dims: &str, config: Option<PyRef<'_, PyAcceleratorConfig>>, softmax_overlap: bool) -> PyResult<String> {
    let cfg = cfg_or_default(config);
    let dims = dims.parse().map_err(py_err)?;
    let timing = if softmax_overlap { SoftmaxTiming::Overlapped } else { SoftmaxTiming::Serialized };
    let sched = build_schedule(&dims, &cfg, &ScheduleOptions { softmax: timing }).map_err(py_err)?;
    Ok(simulate_perf(&sched, &cfg).map_err(py_err)?.to_json())
}

/// Softmax error sweep; `dist` is "uniform", "gaussian:MEAN,SIGMA" or
/// "peaked:FRACTION". Returns the JSON error report.
#[pyfunction]
#[pyo3(signature = (seed=42, rows=1000, length=64, dist="gaussian:0,40"))]
fn softmax_sweep(py: Python<'_>, seed: u64, rows: usize, length: usize, dist: &str) -> PyResult<String> {
    let dist: InputDistribution = dist.parse().map_err(py_err)?;
    let spec = ExperimentSpec::softmax_sweep(seed, rows, length, dist).map_err(py_err)?;
    let report = py.detach(|| harness::run_softmax_sweep(&spec)).map_err(py_err)?;
    Ok(report.to_json())
}

/// Property suite; returns the JSON summary.
#[pyfunction]
#[pyo3(signature = (cases=1000, seed=0x17A, config=None))]
fn verify(py: Python<'_>, cases: usize, seed: u64, config: Option<PyRef<'_, PyAcceleratorConfig>>) -> PyResult<String> {
    let cfg = cfg_or_default(config);
    let opts = SuiteOptions { cases, seed, ..Default::default() };
    let summary = py.detach(|| harness::run_equivalence_suite(&cfg, &opts)).map_err(py_err)?;
    Ok(serde_json::to_string_pretty(&summary).expect("summary serializes"))
}

/// Result of one attention layer run.
#[pyclass(name = "AttentionResult", module = "ita_sim", frozen)]
pub struct PyAttentionResult {
    #[pyo3(get)]
    rows: usize,
    #[pyo3(get)]
    cols: usize,
    /// Row-major int8 output codes.
    #[pyo3(get)]
    output: Vec<i8>,
    #[pyo3(get)]
    output_scale: f64,
    /// Per head, row-major S x S uint8 probabilities as `bytes`.
    #[pyo3(get)]
    probs: Vec<Vec<u8>>,
    /// JSON error report against the float golden model.
    #[pyo3(get)]
    error_report: String,
}

fn run_fixture(py: Python<'_>, fx: harness::Fixture, cfg: ita_core::AcceleratorConfig) -> PyResult<PyAttentionResult> {
    let (out, report) = py
        .detach(|| -> ita_core::Result<_> {
            let out = multi_head_attention(&fx.x, &fx.weights, &cfg, &fx.dims, &AttentionOptions::default())?;
            Ok((out, harness::run_attention_error(&fx, &cfg)?))
        })
        .map_err(py_err)?;
    Ok(PyAttentionResult {
        rows: out.output.rows(),
        cols: out.output.cols(),
        output_scale: out.output.scale(),
        output: out.output.codes().to_vec(),
        probs: out.heads.into_iter().map(|h| h.probs.codes).collect(),
        error_report: report.to_json(),
    })
}

/// Run a calibrated synthetic layer drawn from `seed`.
#[pyfunction]
#[pyo3(signature = (dims, seed=42, config=None))]
fn attention_synthetic(
    py: Python<'_>,
    dims: &str,
    seed: u64,
    config: Option<PyRef<'_, PyAcceleratorConfig>>,
) -> PyResult<PyAttentionResult> {
    let cfg = cfg_or_default(config);
    let fx = harness::generate_fixture(&dims.parse().map_err(py_err)?, seed).map_err(py_err)?;
    run_fixture(py, fx, cfg)
}

/// Run the layer described by a manifest file.
#[pyfunction]
#[pyo3(signature = (manifest, config=None))]
fn attention_manifest(
    py: Python<'_>,
    manifest: PathBuf,
    config: Option<PyRef<'_, PyAcceleratorConfig>>,
) -> PyResult<PyAttentionResult> {
    let cfg = cfg_or_default(config);
    run_fixture(py, load_problem(manifest).map_err(py_err)?, cfg)
}

#[pymodule]
fn ita_sim(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyAcceleratorConfig>()?;
    m.add_class::<PyAttentionResult>()?;
    m.add_function(wrap_pyfunction!(requantize, m)?)?;
    m.add_function(wrap_pyfunction!(softmax_row, m)?)?;
    m.add_function(wrap_pyfunction!(softmax_row_oracle, m)?)?;
    m.add_function(wrap_pyfunction!(softmax_row_float, m)?)?;
    m.add_function(wrap_pyfunction!(perf_report, m)?)?;
    m.add_function(wrap_pyfunction!(softmax_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    m.add_function(wrap_pyfunction!(attention_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(attention_manifest, m)?)?;
    Ok(())
}
