//! Run configuration and the `generate`, `train`, `eval` and `explain`
//! commands behind the `lerp` binary.

use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use lerp_core::checkpoint::{load_model, save_model};
use lerp_core::data::{build_vocab, load_catalog, load_dataset, save_dataset, split, LabelCatalog};
use lerp_core::embedding::load_pretrained;
use lerp_core::explain::{explain_record, render_html};
use lerp_core::metrics::{report, MetricsReport};
use lerp_core::synthetic::{generate, SyntheticConfig};
use lerp_core::training::{evaluate, fit, OptimizerKind, TrainConfig};
use lerp_core::{LerpError, Model, ModelConfig, Variant};

pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const TRAIN_LOG: &str = "train_log.txt";
pub const METRICS: &str = "metrics.json";
pub const DATASET: &str = "dataset.jsonl";
pub const CATALOG: &str = "catalog.json";
pub const TRIGGERS: &str = "triggers.json";
pub const ATTENTION_DIR: &str = "attention";

/// Every setting of a run. Serialized as a flat JSON object; a config file
/// may give any subset of the keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out: PathBuf,
    pub variant: Variant,
    /// Pretrained word vectors; the table is frozen when given.
    pub embeddings: Option<PathBuf>,
    pub dataset: Option<PathBuf>,
    /// Defaults to `catalog.json` next to the dataset.
    pub catalog: Option<PathBuf>,
    /// Defaults to `checkpoint.bin` in `out`.
    pub checkpoint: Option<PathBuf>,
    /// Record ids for `explain`.
    pub records: Vec<String>,

    /// Taken from the vector file when `embeddings` is set, else 64.
    pub embed_dim: Option<usize>,
    pub proj_dim: usize,
    pub conv_width: usize,
    pub pool_width: usize,
    pub hidden_dim: usize,
    pub max_note_len: usize,
    pub freeze_embeddings: bool,

    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub val_fraction: f64,

    pub n_records: usize,
    pub n_labels: usize,
    pub vocab_size: usize,
    pub signal_strength: f64,
    pub event_only_labels: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::new(Variant::Lerp, 4);
        let train = TrainConfig::default();
        RunConfig {
            seed: 42,
            out: PathBuf::from("out"),
            variant: Variant::Lerp,
            embeddings: None,
            dataset: None,
            catalog: None,
            checkpoint: None,
            records: Vec::new(),
            embed_dim: None,
            proj_dim: model.proj_dim,
            conv_width: model.conv_width,
            pool_width: model.pool_width,
            hidden_dim: model.hidden_dim,
            max_note_len: model.max_note_len,
            freeze_embeddings: false,
            optimizer: train.optimizer,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            patience: train.patience,
            val_fraction: 0.2,
            n_records: 1000,
            n_labels: 4,
            vocab_size: 200,
            signal_strength: 0.95,
            event_only_labels: 0,
        }
    }
}

const DEFAULT_EMBED_DIM: usize = 64;

/// Command-line overrides. Each flag replaces the config key of the same
/// name (dashes for underscores).
#[derive(Args, Clone, Debug, Default, Serialize)]
pub struct Overrides {
    /// Flat JSON config file.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub catalog: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<PathBuf>,
    /// Comma-separated record ids.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub records: Option<Vec<String>>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub proj_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub conv_width: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool_width: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hidden_dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_note_len: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub freeze_embeddings: Option<bool>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_records: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_labels: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signal_strength: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub event_only_labels: Option<usize>,
}

/// A failed command: message for standard error plus the process exit code
/// (2 for bad configuration or input data, 1 otherwise).
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<LerpError> for CliError {
    fn from(e: LerpError) -> Self {
        CliError {
            code: if e.is_user_error() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

impl CliError {
    fn user(e: impl fmt::Display) -> Self {
        CliError {
            code: 2,
            message: e.to_string(),
        }
    }

    fn internal(e: impl fmt::Display) -> Self {
        CliError {
            code: 1,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Reading a user-supplied input failed: always the user's problem.
fn input<T>(r: lerp_core::Result<T>) -> CliResult<T> {
    r.map_err(CliError::user)
}

fn config_error(message: impl Into<String>) -> LerpError {
    LerpError::Config(message.into())
}

impl RunConfig {
    /// Parses a config file: a flat JSON object whose keys are a subset of
    /// the [`RunConfig`] fields.
    pub fn parse_partial(text: &str) -> lerp_core::Result<Map<String, Value>> {
        let value: Value = serde_json::from_str(text).map_err(|e| LerpError::Parse {
            line: e.line(),
            message: format!("config: {e}"),
        })?;
        match value {
            Value::Object(map) => Ok(map),
            _ => Err(config_error("config file must hold a JSON object")),
        }
    }

    /// Defaults, then the config file's keys, then the flags.
    pub fn resolve(file: Option<&str>, overrides: &Overrides) -> lerp_core::Result<RunConfig> {
        let mut merged =
            match serde_json::to_value(RunConfig::default()).expect("defaults serialize") {
                Value::Object(map) => map,
                _ => unreachable!("config serializes as an object"),
            };
        if let Some(text) = file {
            merged.extend(Self::parse_partial(text)?);
        }
        if let Value::Object(flags) = serde_json::to_value(overrides).expect("flags serialize") {
            merged.extend(flags);
        }
        let cfg: RunConfig = serde_json::from_value(Value::Object(merged))
            .map_err(|e| config_error(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_overrides(overrides: &Overrides) -> CliResult<RunConfig> {
        let text = match &overrides.config {
            Some(path) => Some(
                std::fs::read_to_string(path)
                    .map_err(|e| CliError::user(format!("{}: {e}", path.display())))?,
            ),
            None => None,
        };
        Ok(RunConfig::resolve(text.as_deref(), overrides)?)
    }

    pub fn validate(&self) -> lerp_core::Result<()> {
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(config_error(format!(
                "val_fraction {} must lie in (0, 1)",
                self.val_fraction
            )));
        }
        self.train_config().validate()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed: self.seed,
            optimizer: self.optimizer,
        }
    }

    pub fn model_config(&self, n_labels: usize) -> ModelConfig {
        ModelConfig {
            variant: self.variant,
            embed_dim: self.embed_dim.unwrap_or(DEFAULT_EMBED_DIM),
            proj_dim: self.proj_dim,
            conv_width: self.conv_width,
            pool_width: self.pool_width,
            hidden_dim: self.hidden_dim,
            n_labels,
            max_note_len: self.max_note_len,
            seed: self.seed,
        }
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        let mut s = SyntheticConfig::new(
            self.n_records,
            self.n_labels,
            self.vocab_size,
            self.signal_strength,
            self.seed,
        );
        s.event_only_labels = self.event_only_labels;
        s
    }

    fn dataset_path(&self) -> CliResult<&Path> {
        let path = self.dataset.as_deref().ok_or_else(|| {
            CliError::user("no dataset given: pass --dataset or set \"dataset\" in the config file")
        })?;
        if !path.is_file() {
            return Err(CliError::user(format!(
                "dataset {} does not exist",
                path.display()
            )));
        }
        Ok(path)
    }

    fn catalog_path(&self) -> CliResult<PathBuf> {
        if let Some(c) = &self.catalog {
            return Ok(c.clone());
        }
        let dataset = self.dataset_path()?;
        Ok(dataset.parent().unwrap_or(Path::new("")).join(CATALOG))
    }

    fn checkpoint_path(&self) -> PathBuf {
        self.checkpoint
            .clone()
            .unwrap_or_else(|| self.out.join(CHECKPOINT))
    }
}

fn create_out(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::internal(format!("{}: {e}", dir.display())))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CliResult<()> {
    std::fs::write(path, contents)
        .map_err(|e| CliError::internal(format!("{}: {e}", path.display())))
}

fn write_resolved(cfg: &RunConfig) -> CliResult<()> {
    create_out(&cfg.out)?;
    write(&cfg.out.join(RESOLVED_CONFIG), cfg.to_json())
}

/// Writes `dataset.jsonl`, `catalog.json` and `triggers.json` (planted word
/// positions per record).
pub fn cmd_generate(cfg: &RunConfig) -> CliResult<()> {
    let data = generate(&cfg.synthetic_config())?;
    write_resolved(cfg)?;
    save_dataset(&cfg.out.join(DATASET), &data.records)?;
    write(&cfg.out.join(CATALOG), data.catalog.to_json())?;
    let triggers = serde_json::to_string_pretty(&data.planted).map_err(CliError::internal)?;
    write(&cfg.out.join(TRIGGERS), triggers + "\n")?;
    eprintln!(
        "wrote {} records and {} labels to {}",
        data.records.len(),
        data.catalog.len(),
        cfg.out.display()
    );
    Ok(())
}

pub struct TrainSummary {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub metrics: MetricsReport,
}

/// Splits the dataset, trains with early stopping and writes the best
/// checkpoint, the epoch log and validation metrics.
pub fn cmd_train(cfg: &RunConfig) -> CliResult<TrainSummary> {
    let mut cfg = cfg.clone();
    let dataset_path = cfg.dataset_path()?.to_path_buf();
    let catalog = input(load_catalog(&cfg.catalog_path()?))?;
    let pretrained = match &cfg.embeddings {
        Some(path) => {
            let (vocab, table) = input(load_pretrained(path))?;
            match cfg.embed_dim {
                Some(d) if d != table.dim() => {
                    return Err(CliError::user(format!(
                        "embed_dim {d} does not match the {}-dimensional vectors in {}",
                        table.dim(),
                        path.display()
                    )))
                }
                _ => cfg.embed_dim = Some(table.dim()),
            }
            Some((vocab, table))
        }
        None => {
            cfg.embed_dim.get_or_insert(DEFAULT_EMBED_DIM);
            None
        }
    };
    write_resolved(&cfg)?;

    let records = input(load_dataset(&dataset_path, &catalog))?;
    let (train, val) = split(&records, 1.0 - cfg.val_fraction, cfg.seed)?;
    let model_cfg = cfg.model_config(catalog.len());
    let mut model = match pretrained {
        Some((vocab, table)) => Model::init(model_cfg, vocab, catalog, Some(table))?,
        None => {
            let vocab = build_vocab(&train, &catalog);
            Model::init(model_cfg, vocab, catalog, None)?
        }
    };
    if cfg.freeze_embeddings {
        model.embeddings.set_trainable(false);
    }
    let train_enc: Vec<_> = train.iter().map(|r| model.encode(r)).collect();
    let val_enc: Vec<_> = val.iter().map(|r| model.encode(r)).collect();

    let log_path = cfg.out.join(TRAIN_LOG);
    let mut log = std::fs::File::create(&log_path)
        .map_err(|e| CliError::internal(format!("{}: {e}", log_path.display())))?;
    let mut log_error = None;
    writeln!(log, "# epoch, train_loss, val_loss, val_micro_auc").map_err(CliError::internal)?;
    let result = fit(&cfg.train_config(), model, &train_enc, &val_enc, |entry| {
        let line = entry.line();
        eprintln!("epoch {line}");
        if let Err(e) = writeln!(log, "{line}") {
            log_error.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_error {
        return Err(CliError::internal(format!("{}: {e}", log_path.display())));
    }

    save_model(&cfg.out.join(CHECKPOINT), &result.best)?;
    let eval = evaluate(&result.best, &val_enc)?;
    let metrics = report(&eval.predictions)?;
    write(&cfg.out.join(METRICS), metrics.to_json() + "\n")?;
    eprintln!(
        "best epoch {} of {}; checkpoint in {}",
        result.best_epoch,
        result.history.len(),
        cfg.out.display()
    );
    Ok(TrainSummary {
        best_epoch: result.best_epoch,
        epochs_run: result.history.len(),
        metrics,
    })
}

fn load_checked(cfg: &RunConfig) -> CliResult<(Model, LabelCatalog)> {
    let model = input(load_model(&cfg.checkpoint_path()))?;
    let catalog = input(load_catalog(&cfg.catalog_path()?))?;
    if catalog.len() != model.config.n_labels {
        return Err(CliError::user(config_error(format!(
            "checkpoint predicts {} labels but the catalog lists {}",
            model.config.n_labels,
            catalog.len()
        ))));
    }
    if catalog != model.catalog {
        return Err(CliError::user(config_error(
            "catalog label names differ from the checkpoint's",
        )));
    }
    Ok((model, catalog))
}

/// Scores the whole dataset with a checkpoint. Returns the headline metrics
/// as JSON (also written to `metrics.json`); fails when micro AUC is
/// undefined.
pub fn cmd_eval(cfg: &RunConfig) -> CliResult<String> {
    let (model, catalog) = load_checked(cfg)?;
    write_resolved(cfg)?;
    let records = input(load_dataset(cfg.dataset_path()?, &catalog))?;
    if records.is_empty() {
        return Err(CliError::user("dataset holds no records"));
    }
    let encoded: Vec<_> = records.iter().map(|r| model.encode(r)).collect();
    let eval = evaluate(&model, &encoded)?;
    let metrics = report(&eval.predictions)?;
    let json = metrics.to_json() + "\n";
    write(&cfg.out.join(METRICS), &json)?;
    if metrics.micro_roc_auc.is_none() {
        return Err(CliError {
            code: 2,
            message: format!("{json}micro ROC AUC is undefined: every target has the same class"),
        });
    }
    Ok(json)
}

/// File stem for a record id: anything outside `[A-Za-z0-9._-]`, and a
/// leading dot, becomes `_`.
pub fn file_stem(id: &str) -> String {
    let mut s: String = id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect();
    if s.is_empty() || s.starts_with('.') {
        s.insert(0, '_');
    }
    s
}

/// Writes `attention/<id>.json` and `attention/<id>.html` for each requested
/// record. Returns the paths written.
pub fn cmd_explain(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    if cfg.records.is_empty() {
        return Err(CliError::user(
            "no record ids given: pass --records id1,id2",
        ));
    }
    let (model, catalog) = load_checked(cfg)?;
    write_resolved(cfg)?;
    let records = input(load_dataset(cfg.dataset_path()?, &catalog))?;
    let mut chosen = Vec::with_capacity(cfg.records.len());
    for id in &cfg.records {
        let record = records
            .iter()
            .find(|r| &r.id == id)
            .ok_or_else(|| CliError::from(LerpError::Data(format!("no record with id {id:?}"))))?;
        chosen.push(record);
    }
    let dir = cfg.out.join(ATTENTION_DIR);
    create_out(&dir)?;
    let mut written = Vec::new();
    for record in chosen {
        let rep = explain_record(&model, record)?;
        let stem = file_stem(&record.id);
        let json_path = dir.join(format!("{stem}.json"));
        let html_path = dir.join(format!("{stem}.html"));
        write(
            &json_path,
            serde_json::to_string_pretty(&rep).map_err(CliError::internal)? + "\n",
        )?;
        write(&html_path, render_html(&rep))?;
        written.extend([json_path, html_path]);
    }
    Ok(written)
}
