//! Python bindings for the mavenrec engine.
//!
//! Exposes the same capabilities as the `mavenrec` CLI — synthetic data,
//! training, evaluation, and attention inspection — as two classes:
//! [`Dataset`] (an interaction store) and [`Model`] (a parameter set). All
//! entity arguments are dense indices; `Dataset` provides name ↔ index
//! lookups for the external string ids.

use std::path::PathBuf;
use std::str::FromStr;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use mavenrec::data::{Entity, InteractionStore};
use mavenrec::eval::{self, Method};
use mavenrec::model::{CheckpointMeta, Forward, ModelConfig, ModelParameters, ScoreMode};
use mavenrec::synth::{self, SynthConfig};
use mavenrec::train::{self, TrainConfig};

fn to_py_err(e: mavenrec::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_mode(mode: &str) -> PyResult<ScoreMode> {
    match mode {
        "full" => Ok(ScoreMode::Full),
        "encoder" => Ok(ScoreMode::EncoderOnly),
        "maven" => Ok(ScoreMode::MavenOnly),
        other => Err(PyValueError::new_err(format!(
            "unknown score mode {:?}; expected full, encoder, or maven",
            other
        ))),
    }
}

/// An interaction store: users, items, groups, and their histories.
#[pyclass(frozen)]
pub struct Dataset {
    store: InteractionStore,
}

#[pymethods]
impl Dataset {
    /// Loads `user_item.csv`, `group_item.csv`, and `membership.csv`.
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        Ok(Dataset {
            store: InteractionStore::load(&dir).map_err(to_py_err)?,
        })
    }

    /// Generates a synthetic population; returns `(dataset, ground_truth)`
    /// where the truth maps each group id to its planted maven and
    /// influence shares.
    #[staticmethod]
    #[pyo3(signature = (
        n_users = 500,
        n_items = 300,
        n_groups = 200,
        group_size_range = (2, 8),
        latent_dim = 8,
        maven_weight = 0.8,
        interactions_per_user = 15,
        interactions_per_group = 24,
        seed = 0,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn synth<'py>(
        py: Python<'py>,
        n_users: usize,
        n_items: usize,
        n_groups: usize,
        group_size_range: (usize, usize),
        latent_dim: usize,
        maven_weight: f64,
        interactions_per_user: usize,
        interactions_per_group: usize,
        seed: u64,
    ) -> PyResult<(Self, Bound<'py, PyDict>)> {
        let config = SynthConfig {
            n_users,
            n_items,
            n_groups,
            group_size_range: [group_size_range.0, group_size_range.1],
            latent_dim,
            maven_weight,
            interactions_per_user,
            interactions_per_group,
            seed,
        };
        let (store, truth) = synth::generate(&config).map_err(to_py_err)?;
        let out = PyDict::new(py);
        for (group, gt) in &truth.groups {
            let entry = PyDict::new(py);
            entry.set_item("maven", &gt.maven)?;
            let influence = PyDict::new(py);
            for (member, weight) in &gt.influence {
                influence.set_item(member, *weight)?;
            }
            entry.set_item("influence", influence)?;
            out.set_item(group, entry)?;
        }
        Ok((Dataset { store }, out))
    }

    /// Writes the three interaction CSVs into `dir`.
    fn write_csvs(&self, dir: PathBuf) -> PyResult<()> {
        self.store.write_csvs(&dir).map_err(to_py_err)
    }

    #[getter]
    fn n_users(&self) -> usize {
        self.store.n_users()
    }

    #[getter]
    fn n_items(&self) -> usize {
        self.store.n_items()
    }

    #[getter]
    fn n_groups(&self) -> usize {
        self.store.n_groups()
    }

    /// External user ids in dense order.
    fn users(&self) -> Vec<String> {
        self.store.users().names().to_vec()
    }

    /// External item ids in dense order.
    fn items(&self) -> Vec<String> {
        self.store.items().names().to_vec()
    }

    /// External group ids in dense order.
    fn groups(&self) -> Vec<String> {
        self.store.groups().names().to_vec()
    }

    /// Dense index of a user id.
    fn user_index(&self, name: &str) -> PyResult<usize> {
        self.store
            .users()
            .dense(name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown user id {:?}", name)))
    }

    /// Dense index of an item id.
    fn item_index(&self, name: &str) -> PyResult<usize> {
        self.store
            .items()
            .dense(name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown item id {:?}", name)))
    }

    /// Dense index of a group id.
    fn group_index(&self, name: &str) -> PyResult<usize> {
        self.store
            .groups()
            .dense(name)
            .ok_or_else(|| PyValueError::new_err(format!("unknown group id {:?}", name)))
    }

    /// Dense member indices of a group.
    fn members(&self, group: usize) -> PyResult<Vec<usize>> {
        if group >= self.store.n_groups() {
            return Err(PyValueError::new_err(format!(
                "group index {} out of range ({} groups)",
                group,
                self.store.n_groups()
            )));
        }
        Ok(self.store.members(group).to_vec())
    }

    fn __repr__(&self) -> String {
        format!(
            "Dataset({} users, {} items, {} groups)",
            self.store.n_users(),
            self.store.n_items(),
            self.store.n_groups()
        )
    }
}

/// A parameter set plus its training bookkeeping.
#[pyclass]
pub struct Model {
    params: ModelParameters,
    meta: CheckpointMeta,
}

#[pymethods]
impl Model {
    /// Freshly initialized parameters for a dataset's entity counts.
    #[staticmethod]
    #[pyo3(signature = (
        dataset,
        seed = 0,
        embedding_dim = 32,
        attention_dim = None,
        hidden_widths = vec![96, 48, 16],
        encoder_layers = 1,
        encoder_heads = 2,
    ))]
    fn init(
        dataset: &Dataset,
        seed: u64,
        embedding_dim: usize,
        attention_dim: Option<usize>,
        hidden_widths: Vec<usize>,
        encoder_layers: usize,
        encoder_heads: usize,
    ) -> PyResult<Self> {
        let config = ModelConfig {
            embedding_dim,
            attention_dim: attention_dim.unwrap_or(embedding_dim),
            hidden_widths,
            encoder_layers,
            encoder_heads,
        };
        let params = ModelParameters::init(
            config,
            dataset.store.n_users(),
            dataset.store.n_items(),
            seed,
        )
        .map_err(to_py_err)?;
        Ok(Model {
            params,
            meta: CheckpointMeta {
                seed,
                epochs_trained: 0,
            },
        })
    }

    /// Loads a checkpoint written by `save` or the CLI.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (params, meta) = ModelParameters::load(&path).map_err(to_py_err)?;
        Ok(Model { params, meta })
    }

    /// Writes a checkpoint.
    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.params.save(&path, self.meta).map_err(to_py_err)
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.meta.seed
    }

    #[getter]
    fn epochs_trained(&self) -> usize {
        self.meta.epochs_trained
    }

    /// Architecture echo.
    fn config<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let c = self.params.config();
        let out = PyDict::new(py);
        out.set_item("embedding_dim", c.embedding_dim)?;
        out.set_item("attention_dim", c.attention_dim)?;
        out.set_item("hidden_widths", c.hidden_widths.clone())?;
        out.set_item("encoder_layers", c.encoder_layers)?;
        out.set_item("encoder_heads", c.encoder_heads)?;
        Ok(out)
    }

    /// User-tower score for a (user, item) pair.
    fn score_user(&self, user: usize, item: usize) -> PyResult<f64> {
        let mut forward = Forward::new(&self.params);
        let score = forward.score_user(user, item).map_err(to_py_err)?;
        Ok(forward.tape.scalar_value(score))
    }

    /// Group-tower score for a member list and item under a mode
    /// ("full", "encoder", or "maven").
    #[pyo3(signature = (members, item, mode = "full"))]
    fn score_group(&self, members: Vec<usize>, item: usize, mode: &str) -> PyResult<f64> {
        let mode = parse_mode(mode)?;
        let mut forward = Forward::new(&self.params);
        let score = forward
            .score_group(&members, item, mode)
            .map_err(to_py_err)?;
        Ok(forward.tape.scalar_value(score))
    }

    /// Per-member attention weights for a member list and item.
    fn attention(&self, members: Vec<usize>, item: usize) -> PyResult<Vec<f64>> {
        let mut forward = Forward::new(&self.params);
        let members_mat = forward.members_matrix(&members).map_err(to_py_err)?;
        let item_vec = forward.item_vec(item).map_err(to_py_err)?;
        let alpha = forward
            .attention_alpha(members_mat, item_vec)
            .map_err(to_py_err)?;
        Ok(forward.tape.value(alpha).data().to_vec())
    }

    /// Trains in place on the dataset's leave-one-out train split and
    /// returns per-epoch `{epoch, group_loss, user_loss}` dicts.
    #[pyo3(signature = (
        dataset,
        epochs = 30,
        batch_size = 128,
        learning_rate = 0.001,
        negatives_per_positive = 4,
        lambda_user = 1.0,
        seed = None,
        checkpoint_path = None,
    ))]
    #[allow(clippy::too_many_arguments)]
    fn train<'py>(
        &mut self,
        py: Python<'py>,
        dataset: &Dataset,
        epochs: usize,
        batch_size: usize,
        learning_rate: f64,
        negatives_per_positive: usize,
        lambda_user: f64,
        seed: Option<u64>,
        checkpoint_path: Option<PathBuf>,
    ) -> PyResult<Bound<'py, PyList>> {
        let seed = seed.unwrap_or(self.meta.seed);
        let config = TrainConfig {
            epochs,
            batch_size,
            learning_rate,
            negatives_per_positive,
            lambda_user,
            seed,
            checkpoint_path,
            ..TrainConfig::default()
        };
        let (train_store, _) = dataset.store.split_leave_one_out(seed);
        let history = train::fit(&mut self.params, &train_store, &config).map_err(to_py_err)?;
        self.meta = CheckpointMeta {
            seed,
            epochs_trained: self.meta.epochs_trained + history.len(),
        };
        let out = PyList::empty(py);
        for stats in history {
            let entry = PyDict::new(py);
            entry.set_item("epoch", stats.epoch)?;
            entry.set_item("group_loss", stats.group_loss)?;
            entry.set_item("user_loss", stats.user_loss)?;
            out.append(entry)?;
        }
        Ok(out)
    }

    /// Ranks held-out group items against sampled negatives and returns
    /// `{method: {"hr": {n: value}, "mrr": value}, ...}` plus counts.
    #[pyo3(signature = (dataset, methods = None, eval_negatives = 100, ns = vec![5, 10], seed = None))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        dataset: &Dataset,
        methods: Option<Vec<String>>,
        eval_negatives: usize,
        ns: Vec<usize>,
        seed: Option<u64>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let methods: Vec<Method> = match methods {
            None => Method::ALL.to_vec(),
            Some(names) => names
                .iter()
                .map(|n| Method::from_str(n).map_err(to_py_err))
                .collect::<PyResult<_>>()?,
        };
        let (train_store, cases) = dataset.store.split_leave_one_out(self.meta.seed);
        let report = eval::evaluate(
            &self.params,
            &train_store,
            &cases,
            &methods,
            eval_negatives,
            &ns,
            seed.unwrap_or(self.meta.seed),
        )
        .map_err(to_py_err)?;
        let out = PyDict::new(py);
        let per_method = PyDict::new(py);
        for (name, metrics) in &report.methods {
            let entry = PyDict::new(py);
            let hr = PyDict::new(py);
            for (n, value) in &metrics.hr {
                hr.set_item(n, value)?;
            }
            entry.set_item("hr", hr)?;
            entry.set_item("mrr", metrics.mrr)?;
            per_method.set_item(name, entry)?;
        }
        out.set_item("methods", per_method)?;
        out.set_item("test_cases", report.test_cases)?;
        out.set_item("skipped", report.skipped)?;
        out.set_item("eval_negatives", report.eval_negatives)?;
        out.set_item("seed", report.seed)?;
        out.set_item("config_hash", &report.config_hash)?;
        Ok(out)
    }

    fn __repr__(&self) -> String {
        let c = self.params.config();
        format!(
            "Model(d={}, hidden={:?}, {} users, {} items, epochs_trained={})",
            c.embedding_dim,
            c.hidden_widths,
            self.params.n_users(),
            self.params.n_items(),
            self.meta.epochs_trained
        )
    }
}

/// Scores every (member-list, item) with each member alone, mirroring the
/// static-aggregation baselines; exposed for parity checks from Python.
#[pyfunction]
fn member_scores(model: &Model, members: Vec<usize>, item: usize) -> PyResult<Vec<f64>> {
    let mut forward = Forward::new(&model.params);
    let mut out = Vec::with_capacity(members.len());
    for &member in &members {
        let score = forward.score_user(member, item).map_err(to_py_err)?;
        out.push(forward.tape.scalar_value(score));
    }
    Ok(out)
}

/// Deterministic negative samples for an entity, matching the trainer's
/// exclusion rule (never a known positive).
#[pyfunction]
#[pyo3(signature = (dataset, kind, entity, count, seed = 0))]
fn sample_negatives(
    dataset: &Dataset,
    kind: &str,
    entity: usize,
    count: usize,
    seed: u64,
) -> PyResult<Vec<usize>> {
    let entity = match kind {
        "user" => Entity::User(entity),
        "group" => Entity::Group(entity),
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown entity kind {:?}; expected user or group",
                other
            )))
        }
    };
    dataset
        .store
        .sample_negatives(entity, count, seed)
        .map_err(to_py_err)
}

#[pymodule]
fn mavenrec_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Dataset>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(member_scores, m)?)?;
    m.add_function(wrap_pyfunction!(sample_negatives, m)?)?;
    Ok(())
}
