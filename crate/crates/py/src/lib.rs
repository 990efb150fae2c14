//! Python bindings for the crowdmem engine.
//!
//! Exposes dataset loading and synthesis, the temporal-aware confidence
//! table, truth-inference baselines, encoder training, and the evaluation
//! metrics. Structured configs (synth and train) are passed as JSON strings
//! matching the CLI config sections.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use crowdmem::confidence as conf;
use crowdmem::dataset as ds;
use crowdmem::dml;
use crowdmem::encoder as enc;
use crowdmem::eval;
use crowdmem::synth;
use crowdmem::truth;
use crowdmem::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

#[pyclass(name = "CrowdDataset")]
struct PyCrowdDataset {
    inner: ds::CrowdDataset,
    synth: Option<synth::SynthOutput>,
}

#[pymethods]
impl PyCrowdDataset {
    /// Load a dataset from the three-file CSV format.
    #[staticmethod]
    fn load(annotations: PathBuf, features: PathBuf, partition: PathBuf) -> PyResult<Self> {
        let inner = ds::load_dataset(&annotations, &features, &partition).map_err(to_py)?;
        Ok(PyCrowdDataset { inner, synth: None })
    }

    /// Generate a synthetic dataset from a JSON config (see SynthConfig).
    #[staticmethod]
    fn synthetic(config_json: &str) -> PyResult<Self> {
        let cfg: synth::SynthConfig =
            serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
        let out = synth::build_synthetic_dataset(&cfg).map_err(to_py)?;
        Ok(PyCrowdDataset {
            inner: out.dataset.clone(),
            synth: Some(out),
        })
    }

    #[getter]
    fn n_samples(&self) -> usize {
        self.inner.n_samples()
    }

    #[getter]
    fn n_workers(&self) -> usize {
        self.inner.n_workers()
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    fn worker_ids(&self) -> Vec<String> {
        self.inner.worker_ids().map(|s| s.to_string()).collect()
    }

    fn split_ids(&self, split: &str) -> PyResult<Vec<String>> {
        let split = match split {
            "train" => ds::Split::Train,
            "validation" => ds::Split::Validation,
            "test" => ds::Split::Test,
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown split {other:?}; expected train/validation/test"
                )))
            }
        };
        Ok(self
            .inner
            .split_ids(split)
            .into_iter()
            .map(|s| s.to_string())
            .collect())
    }

    fn features(&self, sample_id: &str) -> PyResult<Vec<f64>> {
        self.inner
            .sample(sample_id)
            .map(|s| s.features.clone())
            .ok_or_else(|| PyValueError::new_err(format!("unknown sample {sample_id:?}")))
    }

    fn fleiss_kappa(&self) -> PyResult<f64> {
        eval::fleiss_kappa(&self.inner).map_err(to_py)
    }

    /// Generating truth for every sample; only available for synthetic data.
    fn true_labels(&self) -> PyResult<BTreeMap<String, u8>> {
        self.synth
            .as_ref()
            .map(|s| s.true_labels.clone())
            .ok_or_else(|| PyValueError::new_err("true labels exist only for synthetic datasets"))
    }

    fn write_csv(
        &self,
        annotations: PathBuf,
        features: PathBuf,
        partition: PathBuf,
    ) -> PyResult<()> {
        self.inner
            .write_csv(&annotations, &features, &partition)
            .map_err(to_py)
    }
}

#[pyclass(name = "ConfidenceTable")]
struct PyConfidenceTable {
    inner: conf::ConfidenceTable,
}

#[pymethods]
impl PyConfidenceTable {
    fn per_worker(&self, sample_id: &str, worker_id: &str) -> PyResult<f64> {
        self.inner
            .per_worker
            .get(&(sample_id.to_string(), worker_id.to_string()))
            .copied()
            .ok_or_else(|| {
                PyValueError::new_err(format!("no confidence for ({sample_id}, {worker_id})"))
            })
    }

    fn aggregated(&self) -> BTreeMap<String, f64> {
        self.inner.aggregated.clone()
    }

    fn estimated_labels(&self) -> BTreeMap<String, u8> {
        self.inner.estimated_labels.clone()
    }

    fn mean_aggregated(&self) -> f64 {
        self.inner.mean_aggregated()
    }
}

/// Confidence table from raw-feature attention, or from a stored encoder
/// checkpoint when one is given.
#[pyfunction]
#[pyo3(signature = (dataset, k, checkpoint=None))]
fn build_confidence_table(
    dataset: &PyCrowdDataset,
    k: usize,
    checkpoint: Option<PathBuf>,
) -> PyResult<PyConfidenceTable> {
    let inner = match checkpoint {
        Some(path) => {
            let params = enc::load_checkpoint(&path).map_err(to_py)?;
            conf::build_confidence_table(&dataset.inner, &enc::EvalEncoder(&params), k)
        }
        None => conf::build_confidence_table(&dataset.inner, &enc::RawFeatures, k),
    }
    .map_err(to_py)?;
    Ok(PyConfidenceTable { inner })
}

/// Attention weights and memory confidence for one explicit window.
/// `current` and each history entry are `(features, label)` pairs.
#[pyfunction]
fn window_confidence(
    current: (Vec<f64>, u8),
    history: Vec<(Vec<f64>, u8)>,
) -> (Vec<f64>, f64) {
    let window = conf::MemoryWindow {
        k: history.len().max(1),
        current,
        history,
    };
    let weights = conf::attention_weights(&window, &enc::RawFeatures);
    let c = conf::memory_confidence(&window, &weights);
    (weights, c)
}

#[pyclass(name = "InferenceResult")]
struct PyInferenceResult {
    inner: truth::InferenceResult,
}

#[pymethods]
impl PyInferenceResult {
    fn posterior(&self) -> BTreeMap<String, f64> {
        self.inner.posterior.clone()
    }

    fn hard_labels(&self) -> BTreeMap<String, u8> {
        self.inner.hard_labels.clone()
    }

    #[getter]
    fn iterations_run(&self) -> usize {
        self.inner.iterations_run
    }

    #[getter]
    fn converged(&self) -> bool {
        self.inner.converged
    }

    fn log_likelihoods(&self) -> Vec<f64> {
        self.inner.log_likelihoods.clone()
    }

    fn worker_confusion(&self, worker_id: &str) -> PyResult<[[f64; 2]; 2]> {
        self.inner
            .worker_models
            .get(worker_id)
            .copied()
            .ok_or_else(|| PyValueError::new_err(format!("no model for worker {worker_id:?}")))
    }
}

#[pyfunction]
fn majority_vote(dataset: &PyCrowdDataset) -> PyInferenceResult {
    PyInferenceResult {
        inner: truth::majority_vote(&dataset.inner),
    }
}

#[pyfunction]
#[pyo3(signature = (dataset, max_iter=500, tol=1e-8))]
fn dawid_skene(dataset: &PyCrowdDataset, max_iter: usize, tol: f64) -> PyResult<PyInferenceResult> {
    Ok(PyInferenceResult {
        inner: truth::dawid_skene(&dataset.inner, max_iter, tol).map_err(to_py)?,
    })
}

#[pyclass(name = "Encoder")]
struct PyEncoder {
    params: enc::EncoderParams,
}

#[pymethods]
impl PyEncoder {
    #[staticmethod]
    fn load(checkpoint: PathBuf) -> PyResult<Self> {
        Ok(PyEncoder {
            params: enc::load_checkpoint(&checkpoint).map_err(to_py)?,
        })
    }

    fn save(&self, checkpoint: PathBuf) -> PyResult<()> {
        enc::save_checkpoint(&self.params, &checkpoint).map_err(to_py)
    }

    /// Eval-mode embedding of one feature vector.
    fn embed(&self, features: Vec<f64>) -> PyResult<Vec<f64>> {
        enc::forward(&self.params, &features, enc::Mode::Eval).map_err(to_py)
    }

    #[getter]
    fn embedding_dim(&self) -> usize {
        self.params.embedding_dim
    }
}

fn history_to_dicts<'py>(
    py: Python<'py>,
    history: &[dml::EpochRecord],
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    history
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("epoch", r.epoch)?;
            d.set_item("loss", r.loss)?;
            d.set_item("val_acc_estimated", r.val_acc_estimated)?;
            d.set_item("mean_confidence", r.mean_confidence)?;
            d.set_item("confidence_refresh", r.confidence_refresh)?;
            Ok(d)
        })
        .collect()
}

/// Train the encoder; `config_json` matches the CLI config's `train`
/// section. Returns the trained encoder and the per-epoch history.
#[pyfunction]
#[pyo3(signature = (dataset, config_json="{}"))]
fn train<'py>(
    py: Python<'py>,
    dataset: &PyCrowdDataset,
    config_json: &str,
) -> PyResult<(PyEncoder, Vec<Bound<'py, PyDict>>)> {
    let cfg: dml::TrainConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let (params, history) = dml::train(&dataset.inner, &cfg).map_err(to_py)?;
    Ok((PyEncoder { params }, history_to_dicts(py, &history)?))
}

#[pyfunction]
fn accuracy(pred: Vec<u8>, truth: Vec<u8>) -> PyResult<f64> {
    eval::accuracy(&pred, &truth).map_err(to_py)
}

#[pyfunction]
fn roc_auc(scores: Vec<f64>, truth: Vec<u8>) -> PyResult<f64> {
    eval::roc_auc(&scores, &truth).map_err(to_py)
}

#[pyfunction]
fn pearson_r(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    eval::pearson_r(&x, &y).map_err(to_py)
}

#[pyfunction]
fn standardize(values: Vec<f64>) -> PyResult<Vec<f64>> {
    eval::standardize(&values).map_err(to_py)
}

#[pyfunction]
fn cosine_similarity(a: Vec<f64>, b: Vec<f64>) -> f64 {
    enc::cosine_similarity(&a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SYNTH: &str = r#"{
        "n_train": 40, "n_val": 15, "n_test": 25, "feature_dim": 2,
        "class_separation": 4.0, "class_ratio": 0.5,
        "workers": [
            {"kind": "skilled", "flip_probability": 0.05},
            {"kind": "skilled", "flip_probability": 0.05},
            {"kind": "random"}
        ],
        "seed": 4
    }"#;

    #[test]
    fn synthetic_dataset_wrapper_round_trips() {
        let ds = PyCrowdDataset::synthetic(SYNTH).unwrap();
        assert_eq!(ds.n_samples(), 80);
        assert_eq!(ds.n_workers(), 3);
        assert_eq!(ds.feature_dim(), 2);
        assert_eq!(ds.worker_ids(), vec!["w00", "w01", "w02"]);
        assert_eq!(ds.split_ids("train").unwrap().len(), 40);
        assert!(ds.fleiss_kappa().unwrap() > 0.0);
        assert_eq!(ds.true_labels().unwrap().len(), 80);
    }

    #[test]
    fn confidence_and_truth_wrappers_agree_on_keys() {
        let ds = PyCrowdDataset::synthetic(SYNTH).unwrap();
        let table = build_confidence_table(&ds, 4, None).unwrap();
        assert_eq!(table.aggregated().len(), 55);
        assert_eq!(table.estimated_labels().len(), 55);
        let mv = majority_vote(&ds);
        assert_eq!(mv.hard_labels().len(), 55);
        let em = dawid_skene(&ds, 200, 1e-8).unwrap();
        assert!(em.converged());
        assert!(!em.log_likelihoods().is_empty());
        let conf = em.worker_confusion("w00").unwrap();
        assert!((conf[0][0] + conf[0][1] - 1.0).abs() < 1e-9);
    }

    #[test]
    fn window_confidence_matches_closed_form() {
        let (weights, c) = window_confidence(
            (vec![1.0, 0.0], 1),
            vec![(vec![1.0, 0.0], 1), (vec![0.0, 1.0], 0)],
        );
        let e = std::f64::consts::E;
        assert!((weights[0] - e / (2.0 * e + 1.0)).abs() < 1e-12);
        assert!((c - 2.0 * e / (2.0 * e + 1.0)).abs() < 1e-12);
    }

    #[test]
    fn metric_wrappers() {
        assert_eq!(accuracy(vec![1, 0, 1], vec![1, 0, 0]).unwrap(), 2.0 / 3.0);
        assert_eq!(
            roc_auc(vec![0.9, 0.8, 0.2, 0.1], vec![1, 1, 0, 0]).unwrap(),
            1.0
        );
        assert!(pearson_r(vec![1.0, 1.0], vec![1.0, 2.0]).is_err());
        let z = standardize(vec![0.0, 10.0]).unwrap();
        assert!((z[1] - 1.0 / 2f64.sqrt()).abs() < 1e-9);
        assert!((cosine_similarity(vec![1.0, 1.0], vec![1.0, 0.0]) - 1.0 / 2f64.sqrt()).abs() < 1e-9);
    }
}

#[pymodule]
fn crowdmem_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyCrowdDataset>()?;
    m.add_class::<PyConfidenceTable>()?;
    m.add_class::<PyInferenceResult>()?;
    m.add_class::<PyEncoder>()?;
    m.add_function(wrap_pyfunction!(build_confidence_table, m)?)?;
    m.add_function(wrap_pyfunction!(window_confidence, m)?)?;
    m.add_function(wrap_pyfunction!(majority_vote, m)?)?;
    m.add_function(wrap_pyfunction!(dawid_skene, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(roc_auc, m)?)?;
    m.add_function(wrap_pyfunction!(pearson_r, m)?)?;
    m.add_function(wrap_pyfunction!(standardize, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    Ok(())
}
