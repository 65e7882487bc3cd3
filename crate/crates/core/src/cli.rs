//! Command-line pipeline: dataset synthesis, training, evaluation, and
//! attention inspection as reproducible runs.
//!
//! Every run reads one config file (JSON or TOML, unknown keys rejected),
//! takes all randomness from a single seed, and writes a manifest recording
//! the command, config and input hashes, seed, outputs, and wall-clock
//! time. Errors surface as a single machine-parseable line on stderr with a
//! nonzero exit code.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::InteractionStore;
use crate::error::{Error, Result};
use crate::eval::{self, Method};
use crate::model::{CheckpointMeta, Forward, ModelConfig, ModelParameters};
use crate::synth::{self, SynthConfig};
use crate::train::{self, TrainConfig};

/// Group recommendation with attentive opinion-leader mining.
#[derive(Parser, Debug)]
#[command(name = "mavenrec", version, about)]
pub struct Cli {
    /// Worker threads for evaluation (training stays sequential).
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic dataset with planted opinion leaders.
    Synth(SynthArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Evaluate a checkpoint with HR@n and MRR.
    Eval(EvalArgs),
    /// Export attention weights as a heatmap CSV.
    InspectAttention(InspectArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Generator config file (JSON or TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for the dataset files.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training config file (JSON or TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Dataset directory holding the interaction CSVs.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for checkpoint, loss history, and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Override the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Trained checkpoint to evaluate.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory the checkpoint was trained on.
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory for the report files and manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated methods to rank.
    #[arg(long, default_value = "siagr,siagr-g,siagr-m,ncf-avg,ncf-lm")]
    pub methods: String,
    /// Sampled negatives per test case.
    #[arg(long, default_value_t = 100)]
    pub eval_negatives: usize,
    /// Candidate-sampling seed; defaults to the checkpoint's training seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct InspectArgs {
    /// Trained checkpoint to inspect.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Dataset directory the checkpoint was trained on.
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV path (the manifest lands next to it).
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated external group ids; all groups when omitted.
    #[arg(long)]
    pub groups: Option<String>,
    /// Comma-separated external item ids; the full catalog when omitted.
    #[arg(long)]
    pub items: Option<String>,
    /// Emit each member's mean weight over the item set (item_id "mean")
    /// instead of one row per item.
    #[arg(long)]
    pub per_group_mean: bool,
}

/// Record of one command invocation, written alongside its outputs.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub config_hash: Option<String>,
    /// Input file path → SHA-256.
    pub inputs: BTreeMap<String, String>,
    pub seed: u64,
    /// Output file path → SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub duration_seconds: f64,
    pub versions: BTreeMap<String, String>,
}

impl RunManifest {
    fn new(command: &str, seed: u64) -> Self {
        let mut versions = BTreeMap::new();
        versions.insert(
            "mavenrec".to_string(),
            env!("CARGO_PKG_VERSION").to_string(),
        );
        versions.insert("manifest_format".to_string(), "1".to_string());
        RunManifest {
            command: command.to_string(),
            config_path: None,
            config_hash: None,
            inputs: BTreeMap::new(),
            seed,
            outputs: BTreeMap::new(),
            duration_seconds: 0.0,
            versions,
        }
    }

    fn set_config(&mut self, path: &Path) -> Result<()> {
        self.config_path = Some(path.display().to_string());
        self.config_hash = Some(sha256_file(path)?);
        Ok(())
    }

    fn add_input(&mut self, path: &Path) -> Result<()> {
        if path.exists() {
            self.inputs
                .insert(path.display().to_string(), sha256_file(path)?);
        }
        Ok(())
    }

    fn add_output(&mut self, path: &Path) -> Result<()> {
        self.outputs
            .insert(path.display().to_string(), sha256_file(path)?);
        Ok(())
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut body = serde_json::to_string_pretty(self).map_err(|e| Error::Serialize {
            path: path.display().to_string(),
            reason: e.to_string(),
        })?;
        body.push('\n');
        fs::write(path, body).map_err(|e| Error::io(path.display().to_string(), e))
    }
}

/// SHA-256 of a file's contents, lowercase hex.
pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let digest = Sha256::digest(&bytes);
    let mut hex = String::with_capacity(64);
    for byte in digest {
        let _ = write!(hex, "{:02x}", byte);
    }
    Ok(hex)
}

/// Parses a JSON or TOML config file, keyed off the extension.
fn parse_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let body = fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase();
    let parsed = match ext.as_str() {
        "json" => serde_json::from_str(&body).map_err(|e| e.to_string()),
        "toml" => toml::from_str(&body).map_err(|e| e.to_string()),
        other => Err(format!(
            "unsupported config extension {:?}; use .json or .toml",
            other
        )),
    };
    parsed.map_err(|reason| Error::Serialize {
        path: path.display().to_string(),
        reason,
    })
}

/// Flat training config file: optimizer keys plus model architecture keys.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainFileConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub negatives_per_positive: usize,
    pub lambda_user: f64,
    pub seed: u64,
    /// Explicit checkpoint location; defaults to model.json in the out dir.
    pub checkpoint_path: Option<PathBuf>,
    pub embedding_dim: usize,
    /// Attention projection width; defaults to embedding_dim.
    pub attention_dim: Option<usize>,
    pub hidden_widths: Vec<usize>,
    pub encoder_layers: usize,
    pub encoder_heads: usize,
}

impl Default for TrainFileConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let model = ModelConfig::default();
        TrainFileConfig {
            epochs: train.epochs,
            batch_size: train.batch_size,
            learning_rate: train.learning_rate,
            beta1: train.beta1,
            beta2: train.beta2,
            epsilon: train.epsilon,
            negatives_per_positive: train.negatives_per_positive,
            lambda_user: train.lambda_user,
            seed: train.seed,
            checkpoint_path: None,
            embedding_dim: model.embedding_dim,
            attention_dim: None,
            hidden_widths: model.hidden_widths,
            encoder_layers: model.encoder_layers,
            encoder_heads: model.encoder_heads,
        }
    }
}

impl TrainFileConfig {
    /// Splits into the optimizer and architecture configs, resolving the
    /// checkpoint path against the output directory.
    pub fn split(self, out_dir: &Path) -> (TrainConfig, ModelConfig) {
        let checkpoint = self
            .checkpoint_path
            .unwrap_or_else(|| out_dir.join("model.json"));
        let train = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            negatives_per_positive: self.negatives_per_positive,
            lambda_user: self.lambda_user,
            seed: self.seed,
            checkpoint_path: Some(checkpoint),
        };
        let model = ModelConfig {
            embedding_dim: self.embedding_dim,
            attention_dim: self.attention_dim.unwrap_or(self.embedding_dim),
            hidden_widths: self.hidden_widths,
            encoder_layers: self.encoder_layers,
            encoder_heads: self.encoder_heads,
        };
        (train, model)
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Dataset files inside a directory, in canonical order.
fn dataset_files(dir: &Path) -> [PathBuf; 3] {
    [
        dir.join("user_item.csv"),
        dir.join("group_item.csv"),
        dir.join("membership.csv"),
    ]
}

/// Runs a parsed command line; the binary maps errors to exit code 1.
pub fn run(cli: Cli) -> Result<()> {
    init_logging();
    if cli.threads == 0 {
        return Err(Error::Config("--threads must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool setup failed: {}", e)))?;
    match cli.command {
        Command::Synth(args) => cmd_synth(&args),
        Command::Train(args) => cmd_train(&args),
        Command::Eval(args) => cmd_eval(&args),
        Command::InspectAttention(args) => cmd_inspect_attention(&args),
    }
}

fn init_logging() {
    let env = env_logger::Env::new()
        .filter_or("MAVENREC_LOG", "warn")
        .write_style("MAVENREC_LOG_STYLE");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

/// Generates a dataset: three CSVs, the ground-truth JSON, and a manifest.
pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    let started = Instant::now();
    let mut config: SynthConfig = parse_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate()?;
    let mut manifest = RunManifest::new("synth", config.seed);
    manifest.set_config(&args.config)?;
    let (store, truth) = synth::generate(&config)?;
    ensure_dir(&args.out)?;
    store.write_csvs(&args.out)?;
    let truth_path = args.out.join("ground_truth.json");
    truth.write_json(&truth_path)?;
    for path in dataset_files(&args.out) {
        manifest.add_output(&path)?;
    }
    manifest.add_output(&truth_path)?;
    manifest.duration_seconds = started.elapsed().as_secs_f64();
    manifest.write(&args.out.join("manifest.json"))
}

/// Trains on a dataset directory: leave-one-out split on the run seed,
/// fit on the training portion, checkpoint per epoch.
pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let started = Instant::now();
    let file_config: TrainFileConfig = parse_config(&args.config)?;
    ensure_dir(&args.out)?;
    let (mut train_config, model_config) = file_config.split(&args.out);
    if let Some(seed) = args.seed {
        train_config.seed = seed;
    }
    train_config.validate()?;
    model_config.validate()?;
    let mut manifest = RunManifest::new("train", train_config.seed);
    manifest.set_config(&args.config)?;
    for path in dataset_files(&args.data) {
        manifest.add_input(&path)?;
    }
    let store = InteractionStore::load(&args.data)?;
    let (train_store, _cases) = store.split_leave_one_out(train_config.seed);
    let mut params = ModelParameters::init(
        model_config,
        store.n_users(),
        store.n_items(),
        train_config.seed,
    )?;
    let checkpoint = train_config
        .checkpoint_path
        .clone()
        .expect("split always sets a checkpoint path");
    // Epoch-zero checkpoint: an interrupted (or zero-epoch) run still
    // leaves a loadable model behind.
    params.save(
        &checkpoint,
        CheckpointMeta {
            seed: train_config.seed,
            epochs_trained: 0,
        },
    )?;
    let history = train::fit(&mut params, &train_store, &train_config)?;
    let loss_path = args.out.join("loss_history.csv");
    train::write_loss_history(&loss_path, &history)?;
    manifest.add_output(&checkpoint)?;
    manifest.add_output(&loss_path)?;
    manifest.duration_seconds = started.elapsed().as_secs_f64();
    manifest.write(&args.out.join("manifest.json"))
}

fn parse_methods(list: &str) -> Result<Vec<Method>> {
    let methods: Vec<Method> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if methods.is_empty() {
        return Err(Error::Config("--methods lists no methods".into()));
    }
    Ok(methods)
}

/// Loads a checkpoint and its dataset, reproducing the training split from
/// the checkpoint's recorded seed.
fn load_checkpoint_and_store(
    checkpoint: &Path,
    data_dir: &Path,
) -> Result<(ModelParameters, CheckpointMeta, InteractionStore)> {
    let (params, meta) = ModelParameters::load(checkpoint)?;
    let store = InteractionStore::load(data_dir)?;
    if params.n_users() != store.n_users() || params.n_items() != store.n_items() {
        return Err(Error::Invalid(format!(
            "checkpoint was trained on {} users / {} items but the dataset has {} / {}",
            params.n_users(),
            params.n_items(),
            store.n_users(),
            store.n_items()
        )));
    }
    Ok((params, meta, store))
}

/// Evaluates a checkpoint: report JSON + flat CSV + manifest.
pub fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let started = Instant::now();
    let methods = parse_methods(&args.methods)?;
    let (params, meta, store) = load_checkpoint_and_store(&args.checkpoint, &args.data)?;
    let seed = args.seed.unwrap_or(meta.seed);
    let mut manifest = RunManifest::new("eval", seed);
    manifest.add_input(&args.checkpoint)?;
    for path in dataset_files(&args.data) {
        manifest.add_input(&path)?;
    }
    let (train_store, cases) = store.split_leave_one_out(meta.seed);
    let report = eval::evaluate(
        &params,
        &train_store,
        &cases,
        &methods,
        args.eval_negatives,
        &[5, 10],
        seed,
    )?;
    ensure_dir(&args.out)?;
    let json_path = args.out.join("eval_report.json");
    let csv_path = args.out.join("eval_report.csv");
    report.write_json(&json_path)?;
    report.write_csv(&csv_path)?;
    manifest.add_output(&json_path)?;
    manifest.add_output(&csv_path)?;
    manifest.duration_seconds = started.elapsed().as_secs_f64();
    manifest.write(&args.out.join("manifest.json"))
}

/// Resolves comma-separated external ids against an id map.
fn resolve_ids(list: Option<&str>, map: &crate::data::IdMap, kind: &str) -> Result<Vec<usize>> {
    match list {
        None => Ok((0..map.len()).collect()),
        Some(names) => names
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|name| {
                map.dense(name).ok_or_else(|| {
                    Error::Invalid(format!(
                        "unknown {} id {:?}; dataset has {} {}s ({:?}..{:?})",
                        kind,
                        name,
                        map.len(),
                        kind,
                        map.name(0),
                        map.name(map.len() - 1)
                    ))
                })
            })
            .collect(),
    }
}

/// Writes attention weights for (group, item) pairs as a heatmap CSV.
pub fn cmd_inspect_attention(args: &InspectArgs) -> Result<()> {
    let started = Instant::now();
    let (params, meta, store) = load_checkpoint_and_store(&args.checkpoint, &args.data)?;
    let mut manifest = RunManifest::new("inspect-attention", meta.seed);
    manifest.add_input(&args.checkpoint)?;
    for path in dataset_files(&args.data) {
        manifest.add_input(&path)?;
    }
    let groups = resolve_ids(args.groups.as_deref(), store.groups(), "group")?;
    let items = resolve_ids(args.items.as_deref(), store.items(), "item")?;
    if items.is_empty() {
        return Err(Error::Invalid("no items to inspect".into()));
    }
    if let Some(parent) = args.out.parent() {
        if !parent.as_os_str().is_empty() {
            ensure_dir(parent)?;
        }
    }
    let mut writer = csv::Writer::from_path(&args.out).map_err(|e| {
        Error::io(
            args.out.display().to_string(),
            std::io::Error::other(e.to_string()),
        )
    })?;
    writer
        .write_record(["group_id", "member_id", "item_id", "weight"])
        .map_err(|e| {
            Error::io(
                args.out.display().to_string(),
                std::io::Error::other(e.to_string()),
            )
        })?;
    for &g in &groups {
        let members = store.members(g);
        let mut mean = vec![0.0; members.len()];
        let mut forward = Forward::new(&params);
        for &item in &items {
            let members_mat = forward.members_matrix(members)?;
            let item_vec = forward.item_vec(item)?;
            let alpha = forward.attention_alpha(members_mat, item_vec)?;
            let weights = forward.tape.value(alpha).data().to_vec();
            for (slot, &w) in weights.iter().enumerate() {
                mean[slot] += w / items.len() as f64;
            }
            if !args.per_group_mean {
                for (slot, &w) in weights.iter().enumerate() {
                    write_weight_row(
                        &mut writer,
                        &args.out,
                        store.groups().name(g),
                        store.users().name(members[slot]),
                        store.items().name(item),
                        w,
                    )?;
                }
            }
        }
        if args.per_group_mean {
            for (slot, &w) in mean.iter().enumerate() {
                write_weight_row(
                    &mut writer,
                    &args.out,
                    store.groups().name(g),
                    store.users().name(members[slot]),
                    "mean",
                    w,
                )?;
            }
        }
    }
    writer
        .flush()
        .map_err(|e| Error::io(args.out.display().to_string(), e))?;
    drop(writer);
    manifest.add_output(&args.out)?;
    manifest.duration_seconds = started.elapsed().as_secs_f64();
    let manifest_path = args
        .out
        .parent()
        .map(|p| p.join("manifest.json"))
        .unwrap_or_else(|| PathBuf::from("manifest.json"));
    manifest.write(&manifest_path)
}

fn write_weight_row(
    writer: &mut csv::Writer<fs::File>,
    out: &Path,
    group: &str,
    member: &str,
    item: &str,
    weight: f64,
) -> Result<()> {
    writer
        .write_record([group, member, item, &weight.to_string()])
        .map_err(|e| {
            Error::io(
                out.display().to_string(),
                std::io::Error::other(e.to_string()),
            )
        })
}
