use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use hiex_core::attribution::Strategy;
use hiex_core::dataset::{self, Sample};
use hiex_core::evaluation::{compare_explainers, Explainer, HeExplainer, RandomWords, ResultsTable};
use hiex_core::hierarchy::{count_forward_passes, pass_budget, BuildConfig, HierarchyMode, PassCount};
use hiex_core::interaction::{verify_erasure_identity_with, IdentityReport, OracleFault, IDENTITY_MAX_LEN};
use hiex_core::par;
use hiex_core::predictor::{BagOfWordsModel, Classifier, Predictor, TrainConfig};
use hiex_core::report;
use hiex_core::synth::{self, PlantedConfig};
use serde::Serialize;

use crate::config::{ConfigError, RunConfig};

const DEFAULT_OUT: &str = "hiex-out";

/// Writes through a sibling temporary file and a rename, so readers never
/// see a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("out");
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming into {}", path.display()))?;
    Ok(())
}

fn load(cfg: &RunConfig) -> Result<(Vec<Sample>, Arc<dyn Classifier>)> {
    let samples = dataset::load_jsonl(&cfg.dataset).with_context(|| format!("dataset {}", cfg.dataset.display()))?;
    if samples.is_empty() {
        return Err(ConfigError(format!("dataset {} has no usable samples", cfg.dataset.display())).into());
    }
    let classifier = cfg.model.load(cfg.seed)?;
    log::info!("{:?}: {} samples, model {}", cfg.command, samples.len(), classifier.describe());
    Ok((samples, classifier))
}

fn out_dir(cfg: &RunConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| DEFAULT_OUT.into())
}

fn build_config(cfg: &RunConfig, mode: HierarchyMode) -> BuildConfig {
    BuildConfig::new(cfg.method.clone(), mode)
        .with_strategy(cfg.strategies[0])
        .with_seed(cfg.seed)
}

/// One hierarchy document and one HTML report per sample.
pub fn explain(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (samples, classifier) = load(cfg)?;
    let out = out_dir(cfg);
    let explainer = HeExplainer::new(cfg.mode.to_string(), build_config(cfg, cfg.mode));
    let indices: Vec<usize> = (0..samples.len()).collect();
    let written = par::with_jobs(cfg.jobs, || {
        par::try_map(&indices, |&i| -> Result<Vec<PathBuf>> {
            let predictor = Predictor::new(classifier.clone());
            let h = explainer
                .hierarchy(&predictor, &samples[i].sequence, i)
                .with_context(|| format!("sample {}", i + 1))?;
            let json = out.join(format!("sample-{:04}.json", i + 1));
            let html = out.join(format!("sample-{:04}.html", i + 1));
            write_atomic(&json, &h.to_json()?)?;
            write_atomic(&html, &report::render_html(&h)?)?;
            Ok(vec![json, html])
        })
    })?;
    Ok(written.into_iter().flatten().collect())
}

fn explainer_for(cfg: &RunConfig, name: &str) -> Result<Box<dyn Explainer>> {
    if name == "random-words" {
        return Ok(Box::new(RandomWords { seed: cfg.seed }));
    }
    let mode: HierarchyMode = name
        .parse()
        .map_err(|_| ConfigError(format!("unknown explainer {name:?}")))?;
    let id = match mode {
        HierarchyMode::Flat => format!("{}-flat", cfg.algo()),
        m => format!("he-{}-{m}", cfg.algo()),
    };
    Ok(Box::new(HeExplainer::new(id, build_config(cfg, mode))))
}

/// AOPC table and accuracy-degradation curves over the configured grid.
pub fn evaluate(cfg: &RunConfig) -> Result<ResultsTable> {
    let (samples, classifier) = load(cfg)?;
    dataset::labeled(&samples).context("evaluate needs a labeled dataset")?;
    let explainers = cfg
        .explainers
        .iter()
        .map(|n| explainer_for(cfg, n))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&dyn Explainer> = explainers.iter().map(|e| e.as_ref()).collect();
    let predictor = Predictor::new(classifier);
    let table = par::with_jobs(cfg.jobs, || {
        compare_explainers(&predictor, &samples, &refs, &cfg.k_percents, &cfg.strategies)
    })?;
    let out = out_dir(cfg);
    write_atomic(&out.join("results.json"), &table.to_json()?)?;
    write_atomic(&out.join("results.txt"), &table.to_text())?;
    Ok(table)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleEntry {
    pub sample: usize,
    pub text: String,
    pub strategy: Strategy,
    /// Absent when the input is longer than the exhaustive sweep allows.
    pub identity: Option<IdentityReport>,
    /// Memoized and unmemoized counts; absent for fewer than two words.
    pub passes: Option<[PassCount; 2]>,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub model: String,
    pub tolerance: f64,
    pub entries: Vec<OracleEntry>,
    pub passed: bool,
}

impl OracleReport {
    pub fn failures(&self) -> impl Iterator<Item = String> + '_ {
        self.entries.iter().filter(|e| !e.passed).map(|e| {
            let mut msg = format!("sample {} [{}] {:?}", e.sample, e.strategy, e.text);
            if let Some(r) = e.identity.as_ref().filter(|r| !r.passed) {
                if let Some((a, b)) = r.worst_pair {
                    msg.push_str(&format!(": identity off by {:.3e} at pair ({a}, {b})", r.max_deviation));
                }
            }
            if let Some([m, u]) = &e.passes {
                if !within_counts(m, u) {
                    msg.push_str(&format!(
                        ": forward passes memoized {}/{} unmemoized {}/{} budget {}",
                        m.measured,
                        m.predicted,
                        u.measured,
                        u.predicted,
                        pass_budget(u.n)
                    ));
                }
            }
            msg
        })
    }
}

/// Repeated words can make distinct erasures coincide, so the analytic
/// counts are upper bounds rather than exact values.
fn within_counts(memoized: &PassCount, unmemoized: &PassCount) -> bool {
    memoized.measured <= memoized.predicted
        && unmemoized.measured <= unmemoized.predicted
        && unmemoized.measured <= pass_budget(unmemoized.n)
}

/// Erasure-identity sweep and forward-pass count check over every sample.
pub fn oracle(cfg: &RunConfig, fault: OracleFault) -> Result<OracleReport> {
    let (samples, classifier) = load(cfg)?;
    let predictor = Predictor::new(classifier.clone());
    let mut cases = Vec::new();
    for (i, _) in samples.iter().enumerate() {
        for &s in &cfg.strategies {
            cases.push((i, s));
        }
    }
    let entries = par::with_jobs(cfg.jobs, || {
        par::try_map(&cases, |&(i, strategy)| -> Result<OracleEntry> {
            let seq = &samples[i].sequence;
            let n = seq.maskable_count();
            let identity = if n <= IDENTITY_MAX_LEN {
                Some(verify_erasure_identity_with(&predictor, seq, strategy, cfg.tolerance, IDENTITY_MAX_LEN, fault)?)
            } else {
                log::warn!("sample {}: {n} words exceed the identity sweep limit, skipped", i + 1);
                None
            };
            let passes = if n >= 2 {
                Some([
                    count_forward_passes(classifier.clone(), seq, strategy, true)?,
                    count_forward_passes(classifier.clone(), seq, strategy, false)?,
                ])
            } else {
                None
            };
            let identity_ok = identity.as_ref().is_none_or(|r| r.passed);
            let passes_ok = passes.as_ref().is_none_or(|[m, u]| within_counts(m, u));
            Ok(OracleEntry {
                sample: i + 1,
                text: seq.tokens().join(" "),
                strategy,
                identity,
                passes,
                passed: identity_ok && passes_ok,
            })
        })
    })?;
    let report = OracleReport {
        model: classifier.describe(),
        tolerance: cfg.tolerance,
        passed: entries.iter().all(|e| e.passed),
        entries,
    };
    if let Some(out) = &cfg.out {
        write_atomic(&out.join("oracle.json"), &serde_json::to_string_pretty(&report)?)?;
    }
    Ok(report)
}

/// Trains the builtin model on a labeled corpus and saves it as JSON.
pub fn train(dataset: &Path, out: &Path, seed: u64, products: &[(String, String)]) -> Result<BagOfWordsModel> {
    let samples = dataset::load_jsonl(dataset).with_context(|| format!("dataset {}", dataset.display()))?;
    let corpus = dataset::labeled(&samples)?;
    let config = TrainConfig {
        seed,
        product_pairs: products.to_vec(),
        ..TrainConfig::default()
    };
    let model = BagOfWordsModel::train(&corpus, &config)?;
    write_atomic(out, &model.to_json()?)?;
    Ok(model)
}

/// Writes a planted-interaction corpus.
pub fn synth(out: &Path, config: &PlantedConfig) -> Result<usize> {
    let samples: Vec<Sample> = synth::generate(config)?.into_iter().map(|s| s.sample).collect();
    write_atomic(out, &dataset::to_jsonl(&samples)?)?;
    Ok(samples.len())
}
