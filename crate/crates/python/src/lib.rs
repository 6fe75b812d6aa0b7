//! Python bindings. Structured inputs (dataset specs, training configs) and
//! structured outputs (traces, reports) cross the boundary as JSON strings.

use std::collections::BTreeSet;

use longtail_lab::losses::{self, AdjustingTerm, LossKind, LossSpec, LossValue};
use longtail_lab::model::ModelDims;
use longtail_lab::{data, metrics, train, Error, ShotThresholds, SubsetPartition};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use serde_json::Value;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::MissingArtifact { .. } => PyIOError::new_err(e.to_string()),
        Error::Divergence { .. } | Error::DegenerateNorm(_) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Overlays the keys of `overrides` (a JSON object) onto the serialized `base`.
fn merged<T: serde::Serialize + serde::de::DeserializeOwned>(base: &T, overrides: Option<&str>) -> PyResult<T> {
    let mut value = serde_json::to_value(base).map_err(json_err)?;
    if let Some(text) = overrides {
        let Value::Object(extra) = serde_json::from_str(text).map_err(json_err)? else {
            return Err(PyValueError::new_err("expected a JSON object"));
        };
        value.as_object_mut().expect("struct serializes to an object").extend(extra);
    }
    serde_json::from_value(value).map_err(json_err)
}

fn parse_kind(kind: &str) -> PyResult<LossKind> {
    kind.parse().map_err(to_py)
}

type Rows = Vec<Vec<f64>>;

fn pair(v: LossValue) -> (f64, Vec<f64>) {
    (v.loss, v.grad)
}

#[pyfunction]
fn class_counts(spec_json: &str) -> PyResult<Vec<usize>> {
    let spec: data::LongTailSpec = serde_json::from_str(spec_json).map_err(json_err)?;
    data::class_counts(&spec).map_err(to_py)
}

/// Returns `(many, medium, few)` class index lists.
#[pyfunction]
#[pyo3(signature = (counts, many=100, few=20))]
fn partition_by_count(counts: Vec<usize>, many: usize, few: usize) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let p = data::partition_by_count(&counts, ShotThresholds { many, few });
    (
        p.many.into_iter().collect(),
        p.medium.into_iter().collect(),
        p.few.into_iter().collect(),
    )
}

#[pyfunction]
fn quantity_factor(counts: Vec<usize>) -> PyResult<Vec<f64>> {
    losses::quantity_factor(&counts).map_err(to_py)
}

#[pyfunction]
fn difficulty_factor(cos_target: f64) -> PyResult<f64> {
    losses::difficulty_factor(cos_target).map_err(to_py)
}

#[pyfunction]
fn ala_adjust(cos_target: f64, qf_target: f64) -> PyResult<f64> {
    losses::ala_adjust(cos_target, qf_target).map_err(to_py)
}

#[pyfunction]
fn ldam_adjust(counts: Vec<usize>, max_margin: f64) -> PyResult<Vec<f64>> {
    losses::ldam_adjust(&counts, max_margin).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (logits, y, s=losses::DEFAULT_SCALE))]
fn ce_loss(logits: Vec<f64>, y: usize, s: f64) -> PyResult<(f64, Vec<f64>)> {
    losses::ce_loss(&logits, y, s).map(pair).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (logits, y, adjust, s=losses::DEFAULT_SCALE, target_only=false))]
fn la_loss(logits: Vec<f64>, y: usize, adjust: Vec<f64>, s: f64, target_only: bool) -> PyResult<(f64, Vec<f64>)> {
    let term = AdjustingTerm {
        values: adjust,
        target_only,
    };
    losses::la_loss(&logits, y, &term, s).map(pair).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (logits, y, counts, s=losses::DEFAULT_SCALE))]
fn ala_loss(logits: Vec<f64>, y: usize, counts: Vec<usize>, s: f64) -> PyResult<(f64, Vec<f64>)> {
    losses::ala_loss(&logits, y, &counts, s).map(pair).map_err(to_py)
}

#[pyfunction]
#[pyo3(signature = (logits, y, s=losses::DEFAULT_SCALE, gamma=losses::DEFAULT_FOCAL_GAMMA))]
fn focal_loss(logits: Vec<f64>, y: usize, s: f64, gamma: f64) -> PyResult<(f64, Vec<f64>)> {
    losses::focal_loss(&logits, y, s, gamma).map(pair).map_err(to_py)
}

/// Any loss kind by name, with its adjusting term prepared from `counts`.
/// Returns `(loss, grad, adjust)`.
#[pyfunction]
#[pyo3(signature = (kind, logits, y, counts, s=losses::DEFAULT_SCALE))]
fn loss(kind: &str, logits: Vec<f64>, y: usize, counts: Vec<usize>, s: f64) -> PyResult<(f64, Vec<f64>, f64)> {
    let prepared = LossSpec::new(parse_kind(kind)?).with_scale(s).prepare(&counts).map_err(to_py)?;
    let out = prepared.evaluate(&logits, y).map_err(to_py)?;
    Ok((out.value.loss, out.value.grad, out.adjust))
}

#[pyclass(name = "Dataset", module = "longtail_lab", from_py_object)]
#[derive(Clone)]
struct PyDataset(data::Dataset);

#[pymethods]
impl PyDataset {
    fn __len__(&self) -> usize {
        self.0.len()
    }

    #[getter]
    fn features(&self) -> Vec<Vec<f64>> {
        self.0.features.row_iter().map(<[f64]>::to_vec).collect()
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.0.labels.clone()
    }

    #[getter]
    fn counts(&self) -> Vec<usize> {
        self.0.counts.clone()
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.0.feature_dim()
    }
}

/// Returns `(train, test)` for a JSON dataset spec.
#[pyfunction]
fn generate(spec_json: &str) -> PyResult<(PyDataset, PyDataset)> {
    let spec: data::LongTailSpec = serde_json::from_str(spec_json).map_err(json_err)?;
    let (train_set, test_set) = data::generate(&spec).map_err(to_py)?;
    Ok((PyDataset(train_set), PyDataset(test_set)))
}

#[pyclass(name = "CosineClassifier", module = "longtail_lab", from_py_object)]
#[derive(Clone)]
struct PyClassifier(longtail_lab::CosineClassifier);

#[pymethods]
impl PyClassifier {
    #[new]
    #[pyo3(signature = (input_dim, num_classes, seed=0, hidden_dim=None))]
    fn new(input_dim: usize, num_classes: usize, seed: u64, hidden_dim: Option<usize>) -> PyResult<Self> {
        let dims = ModelDims {
            input_dim,
            hidden_dim,
            num_classes,
        };
        longtail_lab::CosineClassifier::init(dims, seed).map(Self).map_err(to_py)
    }

    /// Cosine logits for one sample.
    fn forward(&self, x: Vec<f64>) -> PyResult<Vec<f64>> {
        self.0.forward(&x).map_err(to_py)
    }

    /// Parameter gradients of `upstream . forward(x)`: `(class_weights, embed_weights or None)`.
    fn backward(&self, x: Vec<f64>, upstream: Vec<f64>) -> PyResult<(Rows, Option<Rows>)> {
        let g = self.0.backward(&x, &upstream).map_err(to_py)?;
        let rows = |m: &longtail_lab::linalg::Matrix| m.row_iter().map(<[f64]>::to_vec).collect();
        Ok((rows(&g.class_weights), g.embed_weights.as_ref().map(rows)))
    }

    #[getter]
    fn class_weights(&self) -> Vec<Vec<f64>> {
        self.0.class_weights().row_iter().map(<[f64]>::to_vec).collect()
    }
}

/// Trains a copy of `model`; `config_json` overrides top-level fields of the
/// default training config. Returns `(trained_model, trace_csv)`.
#[pyfunction]
#[pyo3(name = "train", signature = (train_set, model, config_json=None))]
fn train_model(
    py: Python<'_>,
    train_set: PyDataset,
    model: PyClassifier,
    config_json: Option<&str>,
) -> PyResult<(PyClassifier, String)> {
    let cfg: train::TrainConfig = merged(&train::TrainConfig::default(), config_json)?;
    let (trained, trace) = py
        .detach(|| train::train(&train_set.0, model.0, &cfg))
        .map_err(to_py)?;
    Ok((PyClassifier(trained), trace.to_csv(&format!("seed={}", cfg.seed))))
}

/// Per-sample `(label, predicted, target_probability)` on `test_set`.
#[pyfunction]
#[pyo3(signature = (model, test_set, s=losses::DEFAULT_SCALE))]
fn evaluate(model: PyClassifier, test_set: PyDataset, s: f64) -> PyResult<Vec<(usize, usize, f64)>> {
    let spec = LossSpec::new(LossKind::Ce).with_scale(s);
    let preds = train::evaluate(&model.0, &test_set.0, &spec).map_err(to_py)?;
    Ok(preds.iter().map(|p| (p.label, p.predicted, p.target_probability)).collect())
}

/// Metrics report as a JSON string.
#[pyfunction]
fn report(
    predictions: Vec<usize>,
    probabilities: Vec<f64>,
    labels: Vec<usize>,
    many: Vec<usize>,
    medium: Vec<usize>,
    few: Vec<usize>,
    num_classes: usize,
) -> PyResult<String> {
    let set = |v: Vec<usize>| v.into_iter().collect::<BTreeSet<_>>();
    let partition = SubsetPartition {
        many: set(many),
        medium: set(medium),
        few: set(few),
    };
    let r = metrics::report(&predictions, &probabilities, &labels, &partition, num_classes).map_err(to_py)?;
    serde_json::to_string(&r).map_err(json_err)
}

#[pymodule(name = "longtail_lab")]
fn longtail_lab_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDataset>()?;
    m.add_class::<PyClassifier>()?;
    m.add_function(wrap_pyfunction!(class_counts, m)?)?;
    m.add_function(wrap_pyfunction!(partition_by_count, m)?)?;
    m.add_function(wrap_pyfunction!(quantity_factor, m)?)?;
    m.add_function(wrap_pyfunction!(difficulty_factor, m)?)?;
    m.add_function(wrap_pyfunction!(ala_adjust, m)?)?;
    m.add_function(wrap_pyfunction!(ldam_adjust, m)?)?;
    m.add_function(wrap_pyfunction!(ce_loss, m)?)?;
    m.add_function(wrap_pyfunction!(la_loss, m)?)?;
    m.add_function(wrap_pyfunction!(ala_loss, m)?)?;
    m.add_function(wrap_pyfunction!(focal_loss, m)?)?;
    m.add_function(wrap_pyfunction!(loss, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    m.add_function(wrap_pyfunction!(train_model, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(report, m)?)?;
    Ok(())
}
