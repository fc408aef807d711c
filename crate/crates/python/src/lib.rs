//! Python bindings for `sine_core`: configuration, synthetic logs, dataset
//! preparation, training, scoring and the rank metrics.

use std::collections::HashMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use sine_core::config::{parse_config, RunConfig};
use sine_core::data::{read_dataset, write_dataset, FeedbackLabel, ItemVocab, SequenceDataset};
use sine_core::diffkit::Matrix;
use sine_core::metrics::{self, evaluate, EvalReport, RankedCandidates, Split};
use sine_core::model::{read_checkpoint, score_next, write_checkpoint, Checkpoint};
use sine_core::objective::{self, train, EpochLog};
use sine_core::synth::generate;
use sine_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Config { .. } | Error::Contract(_) | Error::Vocabulary(_) | Error::UndefinedMetric(_) => {
            PyValueError::new_err(e.to_string())
        }
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn split_of(name: &str) -> PyResult<Split> {
    match name {
        "val" => Ok(Split::Val),
        "test" => Ok(Split::Test),
        other => Err(PyValueError::new_err(format!("split must be 'val' or 'test', got {other:?}"))),
    }
}

/// Run configuration. Built from optional TOML text plus `section.key`
/// overrides, e.g. `Config(overrides={"model.dim": "16"})`.
#[pyclass(name = "Config", module = "sine_py", from_py_object)]
#[derive(Clone)]
struct PyConfig {
    inner: RunConfig,
}

#[pymethods]
impl PyConfig {
    #[new]
    #[pyo3(signature = (toml = None, overrides = None))]
    fn new(toml: Option<&str>, overrides: Option<HashMap<String, String>>) -> PyResult<Self> {
        let mut pairs: Vec<(String, String)> = overrides.unwrap_or_default().into_iter().collect();
        pairs.sort();
        let inner = parse_config(toml.unwrap_or(""), &pairs).map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Copy with additional overrides applied.
    fn with_overrides(&self, overrides: HashMap<String, String>) -> PyResult<Self> {
        let text = self.inner.to_toml().map_err(py_err)?;
        Self::new(Some(&text), Some(overrides))
    }

    fn to_toml(&self) -> PyResult<String> {
        self.inner.to_toml().map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Config(model.dim={}, model.n_interests={}, train.max_epochs={})",
            self.inner.model.dim, self.inner.model.n_interests, self.inner.train.max_epochs
        )
    }
}

/// Generates the synthetic log described by `config.synth` and writes it
/// as CSV. Returns `(interactions, users, items)`.
#[pyfunction]
fn synthesize(config: &PyConfig, path: PathBuf) -> PyResult<(usize, usize, usize)> {
    let (log, _) = generate(&config.inner.synth).map_err(py_err)?;
    log.write_csv(&path).map_err(py_err)?;
    Ok((log.len(), log.user_count(), log.item_count()))
}

/// Per-user leave-one-out sequences over a fixed item vocabulary.
#[pyclass(name = "Dataset", module = "sine_py")]
struct PyDataset {
    inner: SequenceDataset,
}

#[pymethods]
impl PyDataset {
    /// Labels, N-core filters and splits a raw interaction CSV.
    #[staticmethod]
    fn prepare(config: &PyConfig, csv_path: PathBuf) -> PyResult<Self> {
        let inner = sine_core::cli::prepare_dataset(&config.inner, &csv_path).map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_dataset(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_dataset(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.inner.sequences.len()
    }

    #[getter]
    fn n_items(&self) -> usize {
        self.inner.n_items()
    }

    fn user_ids(&self) -> Vec<String> {
        self.inner.sequences.iter().map(|s| s.user_id.clone()).collect()
    }

    /// Training portion of one user as `(item_ids, is_positive)`.
    fn history(&self, user: usize) -> PyResult<(Vec<String>, Vec<bool>)> {
        let seq = self
            .inner
            .sequences
            .get(user)
            .ok_or_else(|| PyValueError::new_err(format!("no user at index {user}")))?;
        let ids = self.inner.item_vocab.ids();
        Ok((
            seq.items.iter().map(|&i| ids[i].clone()).collect(),
            seq.labels.iter().map(|l| l.is_positive()).collect(),
        ))
    }
}

fn report_dict(r: &EvalReport) -> HashMap<String, f64> {
    HashMap::from([
        ("users".to_string(), r.users as f64),
        ("auc".to_string(), r.auc),
        ("gauc".to_string(), r.gauc),
        (format!("ndcg@{}", r.ndcg_k), r.ndcg),
    ])
}

fn epoch_dict(e: &EpochLog) -> HashMap<String, f64> {
    HashMap::from([
        ("epoch".to_string(), e.epoch as f64),
        ("l1".to_string(), e.l1),
        ("l2".to_string(), e.l2),
        ("l_dis".to_string(), e.l_dis),
        ("joint".to_string(), e.joint),
        ("val_gauc".to_string(), e.val_gauc),
    ])
}

/// A trained (or initialised) model together with its item vocabulary.
#[pyclass(name = "Model", module = "sine_py")]
struct PyModel {
    inner: Checkpoint,
    log: Vec<EpochLog>,
}

#[pymethods]
impl PyModel {
    /// Trains on `dataset` with `config.model` and `config.train`.
    #[staticmethod]
    fn train(py: Python<'_>, dataset: &PyDataset, config: &PyConfig) -> PyResult<Self> {
        let cfg = &config.inner;
        let ds = &dataset.inner;
        let outcome = py
            .detach(|| train(ds, &cfg.model, &cfg.train, &cfg.eval))
            .map_err(py_err)?;
        Ok(Self {
            inner: Checkpoint::new(cfg.model.clone(), ds.item_vocab.ids().to_vec(), outcome.params),
            log: outcome.log,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_checkpoint(&path).map_err(py_err)?,
            log: Vec::new(),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        write_checkpoint(&self.inner, &path).map_err(py_err)
    }

    /// Per-epoch losses and validation GAUC from training.
    fn train_log(&self) -> Vec<HashMap<String, f64>> {
        self.log.iter().map(epoch_dict).collect()
    }

    #[getter]
    fn n_interests(&self) -> usize {
        self.inner.config.n_interests
    }

    /// Scores `candidates` as the next item after a history of item ids,
    /// where `positive[i]` is false for a passive negative.
    fn score(&self, items: Vec<String>, positive: Vec<bool>, candidates: Vec<String>) -> PyResult<Vec<f64>> {
        if items.len() != positive.len() {
            return Err(PyValueError::new_err("items and positive differ in length"));
        }
        let vocab = ItemVocab::from_ids(self.inner.item_ids.clone()).map_err(py_err)?;
        let index = |ids: &[String]| ids.iter().map(|i| vocab.index_of(i)).collect::<sine_core::Result<Vec<_>>>();
        let items = index(&items).map_err(py_err)?;
        let candidates = index(&candidates).map_err(py_err)?;
        let labels: Vec<FeedbackLabel> = positive
            .iter()
            .map(|&p| if p { FeedbackLabel::Positive } else { FeedbackLabel::PassiveNegative })
            .collect();
        let start = items.len().saturating_sub(self.inner.config.max_len);
        score_next(&items[start..], &labels[start..], &candidates, &self.inner.params, &self.inner.config)
            .map_err(py_err)
    }

    /// AUC, GAUC and NDCG@k on the validation or test targets.
    #[pyo3(signature = (dataset, config, split = "test"))]
    fn evaluate(&self, dataset: &PyDataset, config: &PyConfig, split: &str) -> PyResult<HashMap<String, f64>> {
        if dataset.inner.item_vocab.ids() != self.inner.item_ids.as_slice() {
            return Err(PyValueError::new_err("dataset vocabulary differs from the model's"));
        }
        let r = evaluate(
            &dataset.inner,
            &self.inner.params,
            &self.inner.config,
            split_of(split)?,
            &config.inner.eval,
        )
        .map_err(py_err)?;
        Ok(report_dict(&r))
    }
}

/// AUC with tied scores counted one half.
#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    metrics::auc(&scores, &labels).map_err(py_err)
}

/// Pair-count weighted mean AUC over `(scores, labels)` groups, each with
/// exactly one relevant candidate.
#[pyfunction]
fn gauc(groups: Vec<(Vec<f64>, Vec<bool>)>) -> PyResult<f64> {
    let users: Vec<RankedCandidates> = groups
        .into_iter()
        .enumerate()
        .map(|(u, (scores, labels))| RankedCandidates {
            user: u.to_string(),
            candidates: (0..scores.len()).collect(),
            scores,
            labels,
        })
        .collect();
    for u in &users {
        u.validate().map_err(py_err)?;
    }
    metrics::gauc(&users).map_err(py_err)
}

#[pyfunction]
fn ndcg_at_k(scores: Vec<f64>, labels: Vec<bool>, k: usize) -> PyResult<f64> {
    metrics::ndcg_at_k(&scores, &labels, k).map_err(py_err)
}

/// Distance correlation between two samples.
#[pyfunction]
fn dcor(x: Vec<f64>, y: Vec<f64>) -> PyResult<f64> {
    objective::dcor(&x, &y).map_err(py_err)
}

/// Mean pairwise distance correlation over the rows of `z`.
#[pyfunction]
fn distance_correlation(z: Vec<Vec<f64>>) -> PyResult<f64> {
    let m = Matrix::from_rows(&z).map_err(py_err)?;
    objective::distance_correlation(&m).map_err(py_err)
}

/// Runs the `sine` command line with `argv` (without the program name)
/// and returns its exit code.
#[pyfunction]
fn run(py: Python<'_>, argv: Vec<String>) -> i32 {
    let mut full = vec!["sine".to_string()];
    full.extend(argv);
    py.detach(|| sine_core::cli::run_command(&full))
}

#[pymodule]
fn sine_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyConfig>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(synthesize, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(gauc, m)?)?;
    m.add_function(wrap_pyfunction!(ndcg_at_k, m)?)?;
    m.add_function(wrap_pyfunction!(dcor, m)?)?;
    m.add_function(wrap_pyfunction!(distance_correlation, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}
