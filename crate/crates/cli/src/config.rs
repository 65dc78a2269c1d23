//! Run configuration: command-line flags merged over an optional TOML file.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::Args;
use hiex_core::attribution::{AttributionMethod, LimeConfig, Strategy};
use hiex_core::dataset;
use hiex_core::hierarchy::HierarchyMode;
use hiex_core::predictor::{BagOfWordsModel, Classifier, HttpClassifier, TrainConfig};
use serde::Deserialize;

/// A bad flag, file or combination of settings.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

fn config_error(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

/// Flags shared by every command that runs explanations.
#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// JSON-lines dataset.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// builtin:<corpus.jsonl | model.json> or http:<url>.
    #[arg(long, env = "HIEX_MODEL_URL")]
    pub model: Option<String>,
    /// Attribution method: loo or lime.
    #[arg(long)]
    pub algo: Option<String>,
    /// Hierarchy mode: unrestricted, connecting, random or flat.
    #[arg(long)]
    pub mode: Option<String>,
    /// Erasure strategies, comma separated: pad, del.
    #[arg(long, value_delimiter = ',')]
    pub strategy: Option<Vec<String>>,
    /// Word budgets in percent, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub k: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Upper bound on worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub lime_samples: Option<usize>,
    #[arg(long)]
    pub lime_kernel_width: Option<f64>,
    /// TOML file with the same keys as the flags (snake_case); flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub dataset: Option<PathBuf>,
    pub model: Option<String>,
    pub algo: Option<String>,
    pub mode: Option<String>,
    pub strategy: Option<Vec<String>>,
    pub k: Option<Vec<f64>>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub lime_samples: Option<usize>,
    pub lime_kernel_width: Option<f64>,
    pub explainers: Option<Vec<String>>,
    pub tolerance: Option<f64>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| config_error(format!("config {}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Explain,
    Evaluate,
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelSpec {
    /// A corpus to train on (`.jsonl`) or a saved model (`.json`).
    Builtin(PathBuf),
    Http(String),
}

impl ModelSpec {
    pub fn parse(spec: &str) -> Result<Self> {
        if let Some(path) = spec.strip_prefix("builtin:") {
            return Ok(Self::Builtin(path.into()));
        }
        if spec.starts_with("http://") || spec.starts_with("https://") {
            return Ok(Self::Http(spec.to_owned()));
        }
        if let Some(rest) = spec.strip_prefix("http:") {
            let rest = rest.trim_start_matches('/');
            return Ok(Self::Http(format!("http://{rest}")));
        }
        Err(config_error(format!("model spec {spec:?} is neither builtin:<path> nor http:<url>")))
    }

    pub fn load(&self, seed: u64) -> Result<Arc<dyn Classifier>> {
        match self {
            Self::Builtin(path) => Ok(Arc::new(load_builtin(path, seed)?)),
            Self::Http(url) => Ok(Arc::new(HttpClassifier::connect(url)?)),
        }
    }
}

fn load_builtin(path: &Path, seed: u64) -> Result<BagOfWordsModel> {
    let is_corpus = path.extension().is_some_and(|e| e == "jsonl");
    if is_corpus {
        let samples = dataset::load_jsonl(path).with_context(|| format!("training corpus {}", path.display()))?;
        let corpus = dataset::labeled(&samples)?;
        log::info!("training builtin model on {} samples", corpus.len());
        Ok(BagOfWordsModel::train(&corpus, &TrainConfig { seed, ..TrainConfig::default() })?)
    } else {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read model {}: {e}", path.display())))?;
        Ok(BagOfWordsModel::from_json(&text)?)
    }
}

/// Fully resolved settings for one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub dataset: PathBuf,
    pub model: ModelSpec,
    pub method: AttributionMethod,
    pub mode: HierarchyMode,
    pub strategies: Vec<Strategy>,
    pub k_percents: Vec<f64>,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub out: Option<PathBuf>,
    pub explainers: Vec<String>,
    pub tolerance: f64,
}

impl RunConfig {
    pub fn resolve(
        command: Command,
        args: RunArgs,
        explainers: Option<Vec<String>>,
        tolerance: Option<f64>,
    ) -> Result<Self> {
        let file = FileConfig::load(args.config.as_deref())?;
        let dataset = args
            .dataset
            .or(file.dataset)
            .ok_or_else(|| config_error("--dataset is required"))?;
        let model = args
            .model
            .or(file.model)
            .ok_or_else(|| config_error("--model is required (or set HIEX_MODEL_URL)"))?;
        let model = ModelSpec::parse(&model)?;

        let algo = args.algo.or(file.algo).unwrap_or_else(|| "loo".into());
        let mode: HierarchyMode = args
            .mode
            .or(file.mode)
            .as_deref()
            .unwrap_or("unrestricted")
            .parse()
            .map_err(|e| config_error(format!("{e}")))?;
        let strategies = match args.strategy.or(file.strategy) {
            Some(v) => v
                .iter()
                .map(|s| s.parse::<Strategy>().map_err(|e| config_error(format!("{e}"))))
                .collect::<Result<Vec<_>>>()?,
            None if command == Command::Explain => vec![Strategy::Pad],
            None => vec![Strategy::Pad, Strategy::Delete],
        };
        if strategies.is_empty() {
            return Err(config_error("--strategy needs at least one value"));
        }
        if command == Command::Explain && strategies.len() != 1 {
            return Err(config_error("explain takes exactly one --strategy"));
        }
        let k_percents = args.k.or(file.k).unwrap_or_else(|| vec![10.0, 20.0]);
        if k_percents.is_empty() {
            return Err(config_error("--k needs at least one value"));
        }
        if let Some(k) = k_percents.iter().find(|k| !(**k > 0.0 && **k <= 100.0)) {
            return Err(config_error(format!("k={k} is outside (0, 100]")));
        }
        let explainers = explainers
            .or(file.explainers)
            .unwrap_or_else(|| vec!["flat".into(), mode.to_string()]);

        let seed = args.seed.or(file.seed);
        let random_mode = mode == HierarchyMode::Random
            || (command == Command::Evaluate && explainers.iter().any(|e| e == "random" || e == "random-words"));
        if seed.is_none() && (algo == "lime" || random_mode) {
            return Err(config_error("--seed is required for lime and random modes"));
        }
        let seed = seed.unwrap_or(0);

        let method = match algo.as_str() {
            "loo" => AttributionMethod::Loo,
            "lime" => {
                let mut cfg = LimeConfig::with_seed(seed);
                if let Some(n) = args.lime_samples.or(file.lime_samples) {
                    cfg.num_samples = n;
                }
                if let Some(w) = args.lime_kernel_width.or(file.lime_kernel_width) {
                    cfg.kernel_width = w;
                }
                cfg.validate().map_err(|e| config_error(e.to_string()))?;
                AttributionMethod::Lime(cfg)
            }
            other => return Err(config_error(format!("unknown --algo {other:?} (expected loo or lime)"))),
        };
        if command == Command::Oracle && !matches!(model, ModelSpec::Builtin(_)) {
            return Err(config_error("oracle runs against a builtin model only"));
        }
        let tolerance = tolerance.or(file.tolerance).unwrap_or(1e-9);

        Ok(Self {
            command,
            dataset,
            model,
            method,
            mode,
            strategies,
            k_percents,
            seed,
            jobs: args.jobs.or(file.jobs),
            out: args.out.or(file.out),
            explainers,
            tolerance,
        })
    }

    pub fn algo(&self) -> &'static str {
        self.method.name()
    }
}
