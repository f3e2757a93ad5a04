//! Python bindings: tensors, the attention block with its diagnostic maps,
//! the gradient-check suite, metric helpers, and a small synthetic training
//! entry point. Build with `cargo build -p mia-py --release`; the cdylib
//! imports as `mia_py` (see python/smoke_test.py).

use std::collections::HashMap;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use mia_core::backbone::{build_mini_cnn, Variant};
use mia_core::data::synth_blobs_noisy;
use mia_core::data::Split;
use mia_core::metrics;
use mia_core::tensor;
use mia_core::train::{self, TrainConfig};
use mia_core::{MiaBlock, Rng};

fn err(e: mia_core::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Dense row-major f64 tensor.
#[pyclass(name = "Tensor")]
#[derive(Clone)]
struct PyTensor {
    inner: tensor::Tensor,
}

#[pymethods]
impl PyTensor {
    #[new]
    fn new(data: Vec<f64>, dims: Vec<usize>) -> PyResult<Self> {
        Ok(PyTensor { inner: tensor::Tensor::from_dims(&dims, data).map_err(err)? })
    }

    #[staticmethod]
    fn zeros(dims: Vec<usize>) -> Self {
        PyTensor { inner: tensor::Tensor::zeros(&dims) }
    }

    #[staticmethod]
    #[pyo3(signature = (dims, lo=-1.0, hi=1.0, seed=0))]
    fn uniform(dims: Vec<usize>, lo: f64, hi: f64, seed: u64) -> Self {
        let mut rng = Rng::new(seed);
        PyTensor { inner: tensor::Tensor::rand_uniform(&dims, lo, hi, &mut rng) }
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.inner.dims().to_vec()
    }

    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn reshape(&self, dims: Vec<usize>) -> PyResult<Self> {
        Ok(PyTensor { inner: self.inner.reshaped(&dims).map_err(err)? })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(dims={:?}, len={})", self.inner.dims(), self.inner.len())
    }
}

/// Intermediates of one attention forward pass.
#[pyclass(name = "AttentionMaps")]
struct PyAttentionMaps {
    #[pyo3(get)]
    z: PyTensor,
    #[pyo3(get)]
    m: PyTensor,
    #[pyo3(get)]
    wc: PyTensor,
    #[pyo3(get)]
    ws: PyTensor,
    #[pyo3(get)]
    a: PyTensor,
}

/// One attention block over feature maps with a fixed channel count.
#[pyclass(name = "MiaBlock")]
struct PyMiaBlock {
    inner: MiaBlock,
}

#[pymethods]
impl PyMiaBlock {
    #[new]
    #[pyo3(signature = (channels, reduction=16, seed=0))]
    fn new(channels: usize, reduction: usize, seed: u64) -> PyResult<Self> {
        if channels == 0 || reduction == 0 {
            return Err(PyValueError::new_err("channels and reduction must be positive"));
        }
        let mut rng = Rng::new(seed);
        Ok(PyMiaBlock { inner: MiaBlock::init(channels, reduction, &mut rng) })
    }

    /// All-zero parameters: both gates sit at 0.5.
    #[staticmethod]
    #[pyo3(signature = (channels, reduction=16))]
    fn zeros(channels: usize, reduction: usize) -> PyResult<Self> {
        if channels == 0 || reduction == 0 {
            return Err(PyValueError::new_err("channels and reduction must be positive"));
        }
        Ok(PyMiaBlock { inner: MiaBlock::zeros(channels, reduction) })
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    #[getter]
    fn reduction(&self) -> usize {
        self.inner.reduction()
    }

    #[getter]
    fn bottleneck(&self) -> usize {
        self.inner.bottleneck()
    }

    fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Recalibrate (N,C,H,W) features; returns (output, maps).
    fn forward(&self, x: &PyTensor) -> PyResult<(PyTensor, PyAttentionMaps)> {
        let (out, maps) = self.inner.forward(&x.inner).map_err(err)?;
        Ok((
            PyTensor { inner: out },
            PyAttentionMaps {
                z: PyTensor { inner: maps.z },
                m: PyTensor { inner: maps.m },
                wc: PyTensor { inner: maps.wc },
                ws: PyTensor { inner: maps.ws },
                a: PyTensor { inner: maps.a },
            },
        ))
    }

    fn __repr__(&self) -> String {
        format!(
            "MiaBlock(channels={}, reduction={}, params={})",
            self.inner.channels(),
            self.inner.reduction(),
            self.inner.param_count()
        )
    }
}

/// Cosine-annealed learning rate at step t of total.
#[pyfunction]
fn cosine_lr(t: usize, total: usize, lr_init: f64, lr_min: f64) -> PyResult<f64> {
    if total < 1 || t > total {
        return Err(PyValueError::new_err("need 0 <= t <= total and total >= 1"));
    }
    Ok(train::cosine_lr(t, total, lr_init, lr_min))
}

/// Run the finite-difference gradient suite; returns
/// [(name, max_rel_err, passed), ...].
#[pyfunction]
#[pyo3(signature = (full=false))]
fn gradcheck_suite(full: bool) -> PyResult<Vec<(String, f64, bool)>> {
    let entries = mia_core::verify::fd_suite(full).map_err(err)?;
    Ok(entries.into_iter().map(|e| (e.name.clone(), e.max_rel_err, e.passed())).collect())
}

/// Dice overlap between two binary masks.
#[pyfunction]
fn dice_coefficient(pred: &PyTensor, truth: &PyTensor) -> PyResult<f64> {
    metrics::dice_coefficient(&pred.inner, &truth.inner).map_err(err)
}

/// Accuracy / precision / recall / F1 for class index lists.
#[pyfunction]
fn classification_metrics(
    pred: Vec<usize>,
    truth: Vec<usize>,
    classes: usize,
) -> PyResult<HashMap<String, f64>> {
    let report = metrics::classification_report(&pred, &truth, classes).map_err(err)?;
    Ok(HashMap::from([
        ("accuracy".to_string(), report.accuracy),
        ("precision".to_string(), report.precision),
        ("recall".to_string(), report.recall),
        ("f1".to_string(), report.f1),
    ]))
}

/// Train the small classifier on synthetic blobs and return
/// (held_out_accuracy, per_epoch_losses).
#[pyfunction]
#[pyo3(signature = (n=64, classes=4, epochs=2, seed=0, variant="mia", noise=0.1))]
fn train_synth_classifier(
    n: usize,
    classes: usize,
    epochs: usize,
    seed: u64,
    variant: &str,
    noise: f64,
) -> PyResult<(f64, Vec<f64>)> {
    let variant = Variant::parse(variant).map_err(err)?;
    let mut model = build_mini_cnn((3, 16, 16), classes, variant, 16, seed).map_err(err)?;
    let train_set = synth_blobs_noisy(n, classes, seed, noise).map_err(err)?;
    let held_out = synth_blobs_noisy(n.div_ceil(2), classes, seed + 1000, noise)
        .map_err(err)?
        .with_split(Split::Test);
    let cfg = TrainConfig { epochs, seed, ..Default::default() };
    let log = train::train_loop(&mut model, &train_set, &cfg).map_err(err)?;
    let report = train::evaluate(&model, &held_out).map_err(err)?;
    Ok((report.accuracy, log.iter().map(|r| r.loss).collect()))
}

#[pymodule]
fn mia_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyTensor>()?;
    m.add_class::<PyMiaBlock>()?;
    m.add_class::<PyAttentionMaps>()?;
    m.add_function(wrap_pyfunction!(cosine_lr, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck_suite, m)?)?;
    m.add_function(wrap_pyfunction!(dice_coefficient, m)?)?;
    m.add_function(wrap_pyfunction!(classification_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(train_synth_classifier, m)?)?;
    Ok(())
}
