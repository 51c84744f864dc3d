//! Python bindings for `sbnet-core`: subband decomposition, fixed-point
//! quantization, probability fusion, parameter accounting, gradient checks
//! and experiment runs.
//!
//! Images and tensors cross the boundary as flat Python lists; shapes are
//! carried explicitly.

use std::collections::HashMap;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sbnet_core::cnn::{check_random_lenet, Shape};
use sbnet_core::harness::{self, DatasetKind, HarnessError, MetricRow, Variant};
use sbnet_core::{fusion, qnum, subband};

fn value_error(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn harness_error(e: HarnessError) -> PyErr {
    match e.exit_code() {
        2 => PyOSError::new_err(e.to_string()),
        _ => value_error(e),
    }
}

/// A channels × height × width image of `f32` samples.
#[pyclass(name = "Image", module = "sbnet", from_py_object)]
#[derive(Clone)]
struct PyImage(subband::Image);

#[pymethods]
impl PyImage {
    #[new]
    fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> PyResult<Self> {
        subband::Image::new(channels, height, width, data).map(Self).map_err(value_error)
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        self.0.shape()
    }

    #[getter]
    fn data(&self) -> Vec<f32> {
        self.0.data().to_vec()
    }

    fn max_abs_diff(&self, other: &PyImage) -> PyResult<f64> {
        self.0.max_abs_diff(&other.0).map_err(value_error)
    }

    fn __repr__(&self) -> String {
        let (c, h, w) = self.0.shape();
        format!("Image({c}x{h}x{w})")
    }
}

/// Splits an image into its full-resolution Laplacian band and its
/// half-resolution Gaussian band.
#[pyfunction]
fn decompose(image: &PyImage) -> PyResult<(PyImage, PyImage)> {
    let pair = subband::decompose(&image.0).map_err(value_error)?;
    Ok((PyImage(pair.l0), PyImage(pair.g1)))
}

/// Inverse of `decompose`.
#[pyfunction]
fn reconstruct(l0: &PyImage, g1: &PyImage) -> PyResult<PyImage> {
    let pair = subband::SubbandPair {
        l0: l0.0.clone(),
        g1: g1.0.clone(),
    };
    subband::reconstruct(&pair).map(PyImage).map_err(value_error)
}

/// A signed fixed-point format with `word_length` bits in total.
#[pyclass(name = "FixedPointFormat", module = "sbnet", frozen, from_py_object)]
#[derive(Clone)]
struct PyFormat(qnum::FixedPointFormat);

#[pymethods]
impl PyFormat {
    #[new]
    fn new(word_length: u32, frac_length: i32) -> PyResult<Self> {
        qnum::FixedPointFormat::new(word_length, frac_length).map(Self).map_err(value_error)
    }

    #[getter]
    fn word_length(&self) -> u32 {
        self.0.word_length()
    }

    #[getter]
    fn frac_length(&self) -> i32 {
        self.0.frac_length()
    }

    #[getter]
    fn integer_length(&self) -> i32 {
        self.0.integer_length()
    }

    #[getter]
    fn step(&self) -> f64 {
        self.0.step()
    }

    #[getter]
    fn max_value(&self) -> f64 {
        self.0.max_value()
    }

    #[getter]
    fn min_value(&self) -> f64 {
        self.0.min_value()
    }

    fn __repr__(&self) -> String {
        format!(
            "FixedPointFormat(word_length={}, frac_length={})",
            self.0.word_length(),
            self.0.frac_length()
        )
    }
}

/// The format whose integer part just covers the largest magnitude.
#[pyfunction]
fn derive_format(values: Vec<f64>, word_length: u32) -> PyResult<PyFormat> {
    qnum::derive_format(&values, word_length).map(PyFormat).map_err(value_error)
}

/// Stochastically rounds `values` onto their derived grid. Returns the
/// rounded values and the format, or `None` for the 32-bit passthrough.
#[pyfunction]
#[pyo3(signature = (values, word_length, seed = 0))]
fn quantize(values: Vec<f64>, word_length: u32, seed: u64) -> PyResult<(Vec<f64>, Option<PyFormat>)> {
    let mut out = values;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let format = qnum::quantize_in_place(&mut out, word_length, &mut rng).map_err(value_error)?;
    Ok((out, format.map(PyFormat)))
}

/// Equal-weight average of two 10-class probability vectors.
#[pyfunction]
fn fuse(s1: Vec<f64>, s2: Vec<f64>) -> PyResult<Vec<f64>> {
    fusion::fuse(&s1, &s2).map(|p| p.values().to_vec()).map_err(value_error)
}

/// Class chosen by the fused distribution (lowest index on ties).
#[pyfunction]
fn predict_fused(s1: Vec<f64>, s2: Vec<f64>) -> PyResult<usize> {
    fusion::predict_fused(&s1, &s2).map_err(value_error)
}

/// Experiment settings, parsed from `key = value` text.
#[pyclass(name = "ExperimentConfig", module = "sbnet", from_py_object)]
#[derive(Clone)]
struct PyConfig(harness::ExperimentConfig);

#[pymethods]
impl PyConfig {
    /// Defaults for `dataset` ("mnist" or "cifar10").
    #[new]
    #[pyo3(signature = (dataset = "mnist"))]
    fn new(dataset: &str) -> PyResult<Self> {
        let kind: DatasetKind = dataset.parse().map_err(value_error)?;
        Ok(Self(harness::ExperimentConfig::for_dataset(kind)))
    }

    #[staticmethod]
    fn parse(text: &str) -> PyResult<Self> {
        harness::ExperimentConfig::parse(text).map(Self).map_err(value_error)
    }

    /// Assigns one key as a config file line would.
    fn set(&mut self, key: &str, value: &str) -> PyResult<()> {
        self.0.set(key, value).map_err(value_error)
    }

    fn validate(&self) -> PyResult<()> {
        self.0.validate().map_err(value_error)
    }

    #[getter]
    fn dataset(&self) -> String {
        self.0.dataset.to_string()
    }

    #[getter]
    fn variants(&self) -> Vec<String> {
        self.0.variants.iter().map(|v| v.to_string()).collect()
    }

    #[getter]
    fn word_bits(&self) -> u32 {
        self.0.word_bits
    }

    #[getter]
    fn epochs(&self) -> usize {
        self.0.epochs
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.0.seed
    }

    fn __str__(&self) -> String {
        self.0.to_config_string()
    }
}

fn row_dict(r: &MetricRow) -> HashMap<&'static str, f64> {
    HashMap::from([
        ("epoch", r.epoch as f64),
        ("train_error", r.train_error),
        ("test_error", r.test_error),
        ("wall_seconds", r.wall_seconds),
    ])
}

/// Parameter count and storage bits of every variant, as
/// `{variant: (param_count, storage_bits)}`.
#[pyfunction]
fn param_report(config: &PyConfig) -> PyResult<HashMap<String, (usize, u64)>> {
    let report = harness::param_report(&config.0).map_err(harness_error)?;
    Ok(report
        .entries
        .iter()
        .map(|e| (e.variant.to_string(), (e.param_count, e.storage_bits)))
        .collect())
}

/// Finite-difference gradient check of a random LeNet on a
/// `1 × size × size` input. Returns `(max_relative_error, passed)`.
#[pyfunction]
#[pyo3(signature = (seed, size = 13, tolerance = 1e-4))]
fn gradcheck(seed: u64, size: usize, tolerance: f64) -> PyResult<(f64, bool)> {
    let report = check_random_lenet(seed, Shape::new(1, size, size), (2, 3), 5, 3, tolerance).map_err(value_error)?;
    Ok((report.max_rel_error, report.passed))
}

/// Loads the configured dataset, trains, writes the output files, and
/// returns `{variant: [per-epoch metrics]}`.
#[pyfunction]
fn run_experiment(py: Python<'_>, config: &PyConfig) -> PyResult<HashMap<String, Vec<HashMap<&'static str, f64>>>> {
    let log = py
        .detach(|| harness::run_experiment(&config.0, &mut |_| {}))
        .map_err(harness_error)?;
    let mut out: HashMap<String, Vec<_>> = HashMap::new();
    for r in &log.rows {
        out.entry(r.variant.to_string()).or_default().push(row_dict(r));
    }
    Ok(out)
}

/// Sample standard deviation of the last `window` test errors of `variant`
/// in a metrics CSV file.
#[pyfunction]
#[pyo3(signature = (path, variant, window = harness::STABILITY_WINDOW))]
fn stability(path: std::path::PathBuf, variant: &str, window: usize) -> PyResult<f64> {
    let variant: Variant = variant.parse().map_err(value_error)?;
    let rows = harness::read_metrics_csv(&path).map_err(harness_error)?;
    let log = harness::MetricsLog {
        rows,
        summary: Vec::new(),
    };
    harness::stability(&log, variant, window).map_err(harness_error)
}

#[pymodule]
fn sbnet(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyFormat>()?;
    m.add_class::<PyConfig>()?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(derive_format, m)?)?;
    m.add_function(wrap_pyfunction!(quantize, m)?)?;
    m.add_function(wrap_pyfunction!(fuse, m)?)?;
    m.add_function(wrap_pyfunction!(predict_fused, m)?)?;
    m.add_function(wrap_pyfunction!(param_report, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(stability, m)?)?;
    Ok(())
}
