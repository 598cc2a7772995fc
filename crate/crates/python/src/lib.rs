//! Python bindings: configs, dataset building, training, evaluation and
//! the IoU and loss primitives. Structured results come back as plain
//! dicts and lists.

use std::path::PathBuf;

use autograd::{Tensor, Var};
use condaseg::data::{self, BuildOptions, DatasetName, MnistSource};
use condaseg::evaluation;
use condaseg::training::{self, ExperimentConfig, Group, RunOptions};
use condaseg::{cli, losses, Error, Variant};
use pyo3::exceptions::{PyFileNotFoundError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config(_) | Error::InvalidArgument(_) | Error::Dimension(_) => PyValueError::new_err(e.to_string()),
        Error::MissingData(_) | Error::Acquisition { .. } => PyFileNotFoundError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

fn tensor(values: Vec<f32>, shape: Vec<usize>) -> PyResult<Tensor> {
    Tensor::new(shape, values).map_err(|e| py_err(e.into()))
}

/// Training configuration of one experiment.
#[pyclass(name = "ExperimentConfig", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: ExperimentConfig,
}

#[pymethods]
impl PyConfig {
    /// Full-scale configuration of a variant.
    #[staticmethod]
    fn reference(variant: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: ExperimentConfig::reference(parse(variant)?),
        })
    }

    /// Reduced configuration that finishes in minutes.
    #[staticmethod]
    fn smoke(variant: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: ExperimentConfig::smoke(parse(variant)?),
        })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyConfig {
            inner: ExperimentConfig::from_json(text).map_err(py_err)?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().map_err(py_err)
    }

    /// Apply one `dotted.key=value` override.
    fn set(&mut self, assignment: &str) -> PyResult<()> {
        let mut value = serde_json::to_value(&self.inner).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        cli::apply_override(&mut value, assignment).map_err(py_err)?;
        self.inner = serde_json::from_value(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(())
    }

    fn validate(&self) -> PyResult<()> {
        self.inner.validate().map_err(py_err)
    }

    /// Learning rate of an optimizer group at a step and epoch.
    fn lr(&self, group: &str, step: u64, epoch: u64) -> PyResult<f32> {
        let group: Group = serde_json::from_value(serde_json::Value::String(group.into()))
            .map_err(|_| PyValueError::new_err(format!("unknown optimizer group {group:?}")))?;
        let spec = self.inner.optimizer(group).map_err(py_err)?;
        Ok(training::lr_schedule(&spec, step, epoch))
    }

    #[getter]
    fn variant(&self) -> String {
        self.inner.variant.to_string()
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.seed = seed;
    }

    #[getter]
    fn output_dir(&self) -> PathBuf {
        self.inner.output_dir.clone()
    }

    #[setter]
    fn set_output_dir(&mut self, dir: PathBuf) {
        self.inner.output_dir = dir;
    }

    #[getter]
    fn data_root(&self) -> Option<PathBuf> {
        self.inner.data.root.clone()
    }

    #[setter]
    fn set_data_root(&mut self, root: Option<PathBuf>) {
        self.inner.data.root = root;
    }

    fn __repr__(&self) -> String {
        format!("ExperimentConfig(variant={:?}, seed={})", self.inner.variant.as_str(), self.inner.seed)
    }
}

/// Build one dataset into `root` (already built splits are left alone)
/// and return the split manifests.
#[pyfunction]
#[pyo3(signature = (name, mnist_dir, root, resolution=64, limit=None, seed=0, verify_checksums=true, download=false))]
#[allow(clippy::too_many_arguments)]
fn build_dataset<'py>(
    py: Python<'py>,
    name: &str,
    mnist_dir: PathBuf,
    root: PathBuf,
    resolution: usize,
    limit: Option<usize>,
    seed: u64,
    verify_checksums: bool,
    download: bool,
) -> PyResult<Bound<'py, PyAny>> {
    let name: DatasetName = parse(name)?;
    let source = MnistSource {
        dir: mnist_dir,
        verify_checksums,
        download,
    };
    let opts = BuildOptions {
        resolution,
        limit,
        seed,
        ..BuildOptions::default()
    };
    let manifests = py.detach(|| data::build_dataset(name, &source, &opts, &root)).map_err(py_err)?;
    to_py(py, &manifests)
}

/// Mean and per-sample foreground fraction of a built split.
#[pyfunction]
fn foreground_stats<'py>(py: Python<'py>, split_dir: PathBuf) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &data::foreground_stats(&split_dir).map_err(py_err)?)
}

/// Train (or resume) and return the final progress counters.
#[pyfunction]
#[pyo3(signature = (config, resume=None))]
fn train<'py>(py: Python<'py>, config: &PyConfig, resume: Option<PathBuf>) -> PyResult<Bound<'py, PyAny>> {
    let cfg = config.inner.clone();
    let opts = RunOptions {
        resume,
        ..RunOptions::default()
    };
    let state = py.detach(|| training::train(&cfg, &opts)).map_err(py_err)?;
    let summary = serde_json::json!({
        "epoch": state.epoch,
        "global_step": state.global_step,
        "best_val_metric": state.best_val_metric,
        "val_history": state.val_history,
        "finished": state.finished,
    });
    to_py(py, &summary)
}

/// Per-class IoU report of a segmenting checkpoint on one split.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, checkpoint: PathBuf, split_dir: PathBuf, variant: &str) -> PyResult<Bound<'py, PyAny>> {
    let variant: Variant = parse(variant)?;
    let report = py
        .detach(|| evaluation::evaluate_segmenter(&checkpoint, &split_dir, variant))
        .map_err(py_err)?;
    to_py(py, &report)
}

/// Render the translation gallery of a checkpointed generator.
#[pyfunction]
fn translation_gallery(py: Python<'_>, checkpoint: PathBuf, dir_a: PathBuf, dir_b: PathBuf, n: usize, path: PathBuf) -> PyResult<()> {
    py.detach(|| evaluation::translation_gallery(&checkpoint, &dir_a, &dir_b, n, &path))
        .map(|_| ())
        .map_err(py_err)
}

/// IoU of `class_id` between two binary masks given as flat values and a
/// shape.
#[pyfunction]
fn iou(pred: Vec<f32>, target: Vec<f32>, shape: Vec<usize>, class_id: usize) -> PyResult<f64> {
    evaluation::iou(&tensor(pred, shape.clone())?, &tensor(target, shape)?, class_id).map_err(py_err)
}

/// Soft-IoU loss of probabilities against a binary mask, both `[B,1,H,W]`.
#[pyfunction]
fn soft_iou_loss(pred: Vec<f32>, target: Vec<f32>, shape: Vec<usize>) -> PyResult<f32> {
    let p = Var::constant(tensor(pred, shape.clone())?);
    let t = Var::constant(tensor(target, shape)?);
    Ok(losses::soft_iou_loss(&p, &t).map_err(py_err)?.item())
}

/// `(stop, is_best, epochs_since_best)` after the newest validation loss.
#[pyfunction]
fn early_stopper(history: Vec<f64>, patience: u64) -> (bool, bool, u64) {
    let d = training::early_stopper(&history, patience);
    (d.stop, d.is_best, d.epochs_since_best)
}

/// Parameter counts of the reference networks next to the published ones.
#[pyfunction]
fn param_table(py: Python<'_>) -> PyResult<Bound<'_, PyAny>> {
    let nets = evaluation::reference_networks().map_err(py_err)?;
    let refs: Vec<(&str, &dyn condaseg::nets::Network)> = nets.iter().map(|(n, b)| (n.as_str(), b.as_ref())).collect();
    to_py(py, &evaluation::param_table(&refs))
}

/// Write every default config into `dir`; returns the paths written.
#[pyfunction]
fn emit_default_configs(dir: PathBuf) -> PyResult<Vec<PathBuf>> {
    cli::emit_default_configs(&dir).map_err(py_err)
}

#[pymodule]
fn condaseg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add("VARIANTS", Variant::ALL.iter().map(|v| v.as_str()).collect::<Vec<_>>())?;
    m.add_function(wrap_pyfunction!(build_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(foreground_stats, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(translation_gallery, m)?)?;
    m.add_function(wrap_pyfunction!(iou, m)?)?;
    m.add_function(wrap_pyfunction!(soft_iou_loss, m)?)?;
    m.add_function(wrap_pyfunction!(early_stopper, m)?)?;
    m.add_function(wrap_pyfunction!(param_table, m)?)?;
    m.add_function(wrap_pyfunction!(emit_default_configs, m)?)?;
    Ok(())
}
