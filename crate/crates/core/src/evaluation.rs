//! Faithfulness metrics: word selection from scored hierarchies, AOPC under
//! `del` and `pad`, accuracy degradation, and explainer comparison tables.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attribution::{marginalize, Strategy, TokenSet};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::hierarchy::{explain, BuildConfig, Hierarchy, HierarchyMode};
use crate::par;
use crate::predictor::{Prediction, Predictor, TokenSequence};
use crate::rng;

/// Words modified for a `k_percent` budget over `n` maskable tokens.
/// Zero only for `k_percent <= 0`; otherwise `round(k·n/100)` clamped to
/// `[1, n]`.
pub fn word_budget(k_percent: f64, n: usize) -> usize {
    if k_percent <= 0.0 || n == 0 {
        return 0;
    }
    ((k_percent * n as f64 / 100.0).round() as usize).clamp(1, n)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WordSelection {
    pub k_percent: f64,
    pub budget: usize,
    /// Token positions in selection order.
    pub chosen: Vec<usize>,
    /// Per-word score of the cluster each word was selected through.
    pub effective_scores: Vec<f64>,
}

impl WordSelection {
    pub fn token_set(&self) -> TokenSet {
        TokenSet::new(self.chosen.iter().copied())
    }
}

fn desc(a: f64, b: f64) -> Ordering {
    let key = |v: f64| if v.is_nan() { f64::NEG_INFINITY } else { v };
    key(b).total_cmp(&key(a))
}

/// Picks `word_budget(k_percent, n)` words from a scored hierarchy.
///
/// Clusters are ranked by score per member, descending; ties go to the
/// smaller cluster, then to the lexicographically smaller member list. The
/// ranking is scanned and a cluster is taken when it overlaps no chosen
/// word (which also excludes every ancestor of a taken cluster). A cluster
/// that would overshoot the budget contributes its members with the best
/// singleton scores.
pub fn select_top_words(h: &Hierarchy, k_percent: f64) -> Result<WordSelection> {
    if !h.is_scored() {
        return Err(Error::Contract("word selection needs a scored hierarchy".into()));
    }
    let budget = word_budget(k_percent, h.leaves.len());
    let mut ranked: Vec<(f64, TokenSet)> = h
        .clusters()
        .into_iter()
        .map(|c| (h.scores[&c.id] / c.members.len() as f64, c.members))
        .collect();
    ranked.sort_by(|a, b| {
        desc(a.0, b.0)
            .then(a.1.len().cmp(&b.1.len()))
            .then_with(|| a.1.cmp(&b.1))
    });
    let singleton = |pos: usize| {
        let leaf = h.leaves.iter().find(|l| l.members.first() == Some(pos)).unwrap();
        h.scores[&leaf.id]
    };

    let mut chosen = Vec::with_capacity(budget);
    let mut effective_scores = Vec::with_capacity(budget);
    let mut taken: HashSet<usize> = HashSet::new();
    for (per_word, members) in ranked {
        if chosen.len() >= budget {
            break;
        }
        if members.iter().any(|p| taken.contains(&p)) {
            continue;
        }
        let mut words: Vec<usize> = members.iter().collect();
        words.sort_by(|&a, &b| desc(singleton(a), singleton(b)).then(a.cmp(&b)));
        words.truncate(budget - chosen.len());
        for w in words {
            taken.insert(w);
            chosen.push(w);
            effective_scores.push(per_word);
        }
    }
    Ok(WordSelection {
        k_percent,
        budget,
        chosen,
        effective_scores,
    })
}

/// Something that picks words to perturb for each budget.
pub trait Explainer: Send + Sync {
    fn id(&self) -> String;

    /// Configuration recorded next to results.
    fn provenance(&self) -> serde_json::Value;

    /// One selection per entry of `k_percents`. `sample` is the position of
    /// the input in its dataset and seeds any per-sample randomness.
    fn select(
        &self,
        predictor: &Predictor,
        seq: &TokenSequence,
        sample: usize,
        k_percents: &[f64],
    ) -> Result<Vec<WordSelection>>;
}

/// Hierarchical explainer; `HierarchyMode::Flat` gives the plain base
/// attribution method.
#[derive(Debug, Clone)]
pub struct HeExplainer {
    pub id: String,
    pub config: BuildConfig,
}

impl HeExplainer {
    pub fn new(id: impl Into<String>, config: BuildConfig) -> Self {
        Self { id: id.into(), config }
    }

    /// Hierarchy for one sample. Random mode draws from a per-sample
    /// substream; inputs with a single maskable token get a flat hierarchy.
    pub fn hierarchy(&self, predictor: &Predictor, seq: &TokenSequence, sample: usize) -> Result<Hierarchy> {
        let mut config = self.config.clone();
        if config.mode == HierarchyMode::Random {
            config.seed = rng::substream_seed(config.seed, "random-mode", sample as u64);
        }
        if seq.maskable_count() < 2 {
            config.mode = HierarchyMode::Flat;
        }
        explain(predictor, seq, &config)
    }
}

impl Explainer for HeExplainer {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn provenance(&self) -> serde_json::Value {
        serde_json::to_value(&self.config).unwrap_or(serde_json::Value::Null)
    }

    fn select(
        &self,
        predictor: &Predictor,
        seq: &TokenSequence,
        sample: usize,
        k_percents: &[f64],
    ) -> Result<Vec<WordSelection>> {
        let h = self.hierarchy(predictor, seq, sample)?;
        k_percents.iter().map(|&k| select_top_words(&h, k)).collect()
    }
}

/// Uniformly random words; a floor for every metric.
#[derive(Debug, Clone)]
pub struct RandomWords {
    pub seed: u64,
}

impl Explainer for RandomWords {
    fn id(&self) -> String {
        "random-words".into()
    }

    fn provenance(&self) -> serde_json::Value {
        serde_json::json!({ "kind": "random-words", "seed": self.seed })
    }

    fn select(&self, _: &Predictor, seq: &TokenSequence, sample: usize, k_percents: &[f64]) -> Result<Vec<WordSelection>> {
        let mut order = seq.maskable_positions();
        order.shuffle(&mut rng::substream(self.seed, "sampling", sample as u64));
        Ok(k_percents
            .iter()
            .map(|&k| {
                let budget = word_budget(k, order.len());
                WordSelection {
                    k_percent: k,
                    budget,
                    chosen: order[..budget].to_vec(),
                    effective_scores: vec![0.0; budget],
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AopcEntry {
    pub explainer: String,
    pub strategy: Strategy,
    pub k_percent: f64,
    pub value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationPoint {
    pub k_percent: f64,
    pub accuracy: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationCurve {
    pub explainer: String,
    pub points: Vec<DegradationPoint>,
}

struct SampleRun {
    base: Prediction,
    selections: Vec<WordSelection>,
}

/// A predictor sharing the classifier but with its own cache, so memory
/// stays bounded by one sample's worth of predictions.
fn scratch(predictor: &Predictor) -> Predictor {
    if predictor.is_cached() {
        Predictor::new(predictor.classifier())
    } else {
        Predictor::uncached(predictor.classifier())
    }
}

fn run(predictor: &Predictor, samples: &[Sample], explainer: &dyn Explainer, ks: &[f64]) -> Result<Vec<SampleRun>> {
    if samples.is_empty() {
        return Err(Error::DegenerateInput("evaluation needs at least one sample".into()));
    }
    let indexed: Vec<usize> = (0..samples.len()).collect();
    par::try_map(&indexed, |&i| {
        let p = scratch(predictor);
        let seq = &samples[i].sequence;
        let base = p.predict(seq)?;
        let selections = explainer.select(&p, seq, i, ks)?;
        Ok(SampleRun { base, selections })
    })
}

/// Predictions after applying `strategy` to each selection of one sample.
fn perturbed(predictor: &Predictor, seq: &TokenSequence, run: &SampleRun, strategy: Strategy) -> Result<Vec<Prediction>> {
    let inputs = run
        .selections
        .iter()
        .map(|s| {
            if s.chosen.is_empty() {
                Ok(seq.clone())
            } else {
                marginalize(seq, &s.token_set(), strategy)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    scratch(predictor).predict_many(&inputs)
}

fn aopc_from_runs(
    predictor: &Predictor,
    samples: &[Sample],
    runs: &[SampleRun],
    explainer: &str,
    ks: &[f64],
    strategy: Strategy,
) -> Result<Vec<AopcEntry>> {
    let indexed: Vec<usize> = (0..samples.len()).collect();
    let drops = par::try_map(&indexed, |&i| {
        let run = &runs[i];
        let target = run.base.predicted;
        let after = perturbed(predictor, &samples[i].sequence, run, strategy)?;
        Ok::<_, Error>(run
            .selections
            .iter()
            .zip(after)
            .map(|(s, p)| if s.chosen.is_empty() { 0.0 } else { run.base.prob(target) - p.prob(target) })
            .collect::<Vec<f64>>())
    })?;
    Ok(ks
        .iter()
        .enumerate()
        .map(|(j, &k)| AopcEntry {
            explainer: explainer.to_owned(),
            strategy,
            k_percent: k,
            value: drops.iter().map(|d| d[j]).sum::<f64>() / drops.len() as f64,
            n: drops.len(),
        })
        .collect())
}

fn degradation_from_runs(
    predictor: &Predictor,
    samples: &[Sample],
    runs: &[SampleRun],
    explainer: &str,
    ks: &[f64],
) -> Result<DegradationCurve> {
    let labels = samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.label.ok_or_else(|| Error::Dataset {
                line: i + 1,
                message: "accuracy degradation needs gold labels".into(),
            })
        })
        .collect::<Result<Vec<usize>>>()?;
    let indexed: Vec<usize> = (0..samples.len()).collect();
    let correct = par::try_map(&indexed, |&i| {
        let after = perturbed(predictor, &samples[i].sequence, &runs[i], Strategy::Pad)?;
        Ok::<_, Error>(after.iter().map(|p| p.predicted == labels[i]).collect::<Vec<bool>>())
    })?;
    Ok(DegradationCurve {
        explainer: explainer.to_owned(),
        points: ks
            .iter()
            .enumerate()
            .map(|(j, &k)| DegradationPoint {
                k_percent: k,
                accuracy: correct.iter().filter(|c| c[j]).count() as f64 / correct.len() as f64,
                n: correct.len(),
            })
            .collect(),
    })
}

/// Mean drop in the originally predicted class probability after applying
/// `strategy` to each explainer's top-k% words, one entry per k.
pub fn aopc(
    predictor: &Predictor,
    samples: &[Sample],
    explainer: &dyn Explainer,
    k_percents: &[f64],
    strategy: Strategy,
) -> Result<Vec<AopcEntry>> {
    let runs = run(predictor, samples, explainer, k_percents)?;
    aopc_from_runs(predictor, samples, &runs, &explainer.id(), k_percents, strategy)
}

/// Accuracy against gold labels after padding each explainer's top-k% words.
pub fn accuracy_degradation(
    predictor: &Predictor,
    samples: &[Sample],
    explainer: &dyn Explainer,
    k_percents: &[f64],
) -> Result<DegradationCurve> {
    let runs = run(predictor, samples, explainer, k_percents)?;
    degradation_from_runs(predictor, samples, &runs, &explainer.id(), k_percents)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplainerInfo {
    pub id: String,
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsTable {
    pub model: String,
    pub samples: usize,
    pub k_percents: Vec<f64>,
    pub strategies: Vec<Strategy>,
    pub explainers: Vec<ExplainerInfo>,
    pub aopc: Vec<AopcEntry>,
    /// Present when every sample is labeled.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degradation: Vec<DegradationCurve>,
}

impl ResultsTable {
    pub fn cell(&self, explainer: &str, strategy: Strategy, k_percent: f64) -> Option<&AopcEntry> {
        self.aopc
            .iter()
            .find(|e| e.explainer == explainer && e.strategy == strategy && e.k_percent == k_percent)
    }

    pub fn curve(&self, explainer: &str) -> Option<&DegradationCurve> {
        self.degradation.iter().find(|c| c.explainer == explainer)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Aligned plain-text rendering.
    pub fn to_text(&self) -> String {
        let mut rows = vec![["explainer".to_owned(), "strategy".into(), "k%".into(), "aopc".into(), "n".into()]];
        for e in &self.aopc {
            rows.push([
                e.explainer.clone(),
                e.strategy.to_string(),
                format!("{}", e.k_percent),
                format!("{:.4}", e.value),
                e.n.to_string(),
            ]);
        }
        let mut out = format!("model: {}\nsamples: {}\n\n", self.model, self.samples);
        out.push_str(&align(&rows));
        if !self.degradation.is_empty() {
            let mut rows = vec![["explainer".to_owned(), "k%".into(), "accuracy".into(), "n".into()]];
            for c in &self.degradation {
                for p in &c.points {
                    rows.push([
                        c.explainer.clone(),
                        format!("{}", p.k_percent),
                        format!("{:.4}", p.accuracy),
                        p.n.to_string(),
                    ]);
                }
            }
            out.push('\n');
            out.push_str(&align(&rows));
        }
        out
    }
}

fn align<const N: usize>(rows: &[[String; N]]) -> String {
    let widths: Vec<usize> = (0..N).map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, &w))| if c == 0 { format!("{cell:<w$}") } else { format!("{cell:>w$}") })
            .collect();
        let _ = writeln!(out, "{}", line.join("  ").trim_end());
    }
    out
}

/// Runs every explainer once per sample and evaluates all
/// (strategy, k) cells from the same selections.
pub fn compare_explainers(
    predictor: &Predictor,
    samples: &[Sample],
    explainers: &[&dyn Explainer],
    k_percents: &[f64],
    strategies: &[Strategy],
) -> Result<ResultsTable> {
    let labeled = samples.iter().all(|s| s.label.is_some());
    let mut aopc = Vec::new();
    let mut degradation = Vec::new();
    for explainer in explainers {
        let id = explainer.id();
        let runs = run(predictor, samples, *explainer, k_percents)?;
        for &strategy in strategies {
            aopc.extend(aopc_from_runs(predictor, samples, &runs, &id, k_percents, strategy)?);
        }
        if labeled {
            degradation.push(degradation_from_runs(predictor, samples, &runs, &id, k_percents)?);
        }
    }
    Ok(ResultsTable {
        model: predictor.describe(),
        samples: samples.len(),
        k_percents: k_percents.to_vec(),
        strategies: strategies.to_vec(),
        explainers: explainers
            .iter()
            .map(|e| ExplainerInfo {
                id: e.id(),
                config: e.provenance(),
            })
            .collect(),
        aopc,
        degradation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::AttributionMethod;
    use crate::hierarchy::{Cluster, MergeStep, Provenance, FORMAT_VERSION};
    use crate::interaction::InteractionMode;
    use crate::predictor::ConstantClassifier;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    /// Hand-built hierarchy over `n` plain tokens.
    fn fixture(n: usize, merges: &[(usize, usize)], scores: &[f64]) -> Hierarchy {
        let toks: Vec<String> = (0..n).map(|i| format!("w{i}")).collect();
        let leaves: Vec<Cluster> = (0..n).map(|i| Cluster { id: i, members: TokenSet::singleton(i) }).collect();
        let mut members: Vec<TokenSet> = leaves.iter().map(|c| c.members.clone()).collect();
        let steps: Vec<MergeStep> = merges
            .iter()
            .enumerate()
            .map(|(k, &(l, r))| {
                let m = members[l].union(&members[r]);
                members.push(m.clone());
                MergeStep { step: k + 1, left: l, right: r, merged: n + k, members: m, interaction: None }
            })
            .collect();
        let mode = if merges.is_empty() { HierarchyMode::Flat } else { HierarchyMode::Unrestricted };
        Hierarchy {
            version: FORMAT_VERSION,
            sequence: TokenSequence::from_tokens(&toks).unwrap(),
            mode,
            leaves,
            steps,
            scores: scores.iter().copied().enumerate().collect::<BTreeMap<_, _>>(),
            provenance: Provenance {
                model: "fixture".into(),
                build: BuildConfig::loo(mode).with_interaction(InteractionMode::Absolute),
                target: 0,
                base_probs: vec![0.5, 0.5],
                scoring: None,
            },
        }
    }

    #[test]
    fn budget_rule() {
        assert_eq!(word_budget(0.0, 10), 0);
        assert_eq!(word_budget(10.0, 4), 1);
        assert_eq!(word_budget(20.0, 10), 2);
        assert_eq!(word_budget(25.0, 10), 3);
        assert_eq!(word_budget(100.0, 7), 7);
    }

    #[test]
    fn flat_selection_is_top_k() {
        let h = fixture(5, &[], &[0.1, 0.4, -0.2, 0.4, 0.3]);
        let s = select_top_words(&h, 60.0).unwrap();
        assert_eq!(s.chosen, vec![1, 3, 4]);
    }

    #[test]
    fn strong_cluster_is_taken_whole() {
        // 7 tokens; cluster {2,5} (id 7) has per-word 0.5.
        let h = fixture(7, &[(2, 5), (0, 1), (7, 8), (9, 3), (10, 4), (11, 6)], &[
            0.1, 0.1, 0.2, 0.0, 0.05, 0.3, 0.0, 1.0, 0.1, 0.2, 0.2, 0.1, 0.1,
        ]);
        let s = select_top_words(&h, 2.0 / 7.0 * 100.0).unwrap();
        assert_eq!(s.budget, 2);
        assert_eq!(s.chosen, vec![5, 2]);
        assert_eq!(s.effective_scores, vec![0.5, 0.5]);
    }

    #[test]
    fn overshoot_uses_singleton_scores() {
        // 8 tokens; the best cluster is {0,1,4,6}.
        let h = fixture(8, &[(0, 1), (4, 6), (8, 9), (2, 3), (10, 11), (12, 5), (13, 7)], &[
            0.2, 0.05, 0.0, 0.0, 0.3, 0.0, 0.1, 0.0, 0.3, 0.4, 2.0, 0.0, 1.0, 0.5, 0.4,
        ]);
        let s = select_top_words(&h, 3.0 / 8.0 * 100.0).unwrap();
        assert_eq!(s.budget, 3);
        assert_eq!(s.chosen, vec![4, 0, 6]);
    }

    #[test]
    fn ancestors_of_taken_clusters_are_skipped() {
        let h = fixture(4, &[(0, 1), (4, 2), (5, 3)], &[0.9, 0.0, 0.0, 0.5, 0.2, 0.3, 0.4]);
        let s = select_top_words(&h, 50.0).unwrap();
        // {0} first, then {3}; {0,1}, {0,1,2} and the root overlap {0}.
        assert_eq!(s.chosen, vec![0, 3]);
    }

    #[test]
    fn unscored_hierarchy_is_rejected() {
        let mut h = fixture(3, &[], &[0.1, 0.2, 0.3]);
        h.scores.clear();
        assert!(matches!(select_top_words(&h, 50.0), Err(Error::Contract(_))));
    }

    fn samples(n: usize) -> Vec<Sample> {
        (0..n)
            .map(|i| Sample {
                sequence: TokenSequence::from_text("a b c d e f").unwrap(),
                label: Some(i % 2),
            })
            .collect()
    }

    #[test]
    fn constant_model_metrics() {
        let p = Predictor::new(Arc::new(ConstantClassifier::uniform(2)));
        let data = samples(6);
        let he = HeExplainer::new("he", BuildConfig::loo(HierarchyMode::Unrestricted));
        let flat = HeExplainer::new("flat", BuildConfig::loo(HierarchyMode::Flat));
        let random = RandomWords { seed: 3 };
        let ks = [0.0, 10.0, 50.0];
        let table = compare_explainers(&p, &data, &[&he, &flat, &random], &ks, &[Strategy::Pad, Strategy::Delete]).unwrap();
        assert_eq!(table.aopc.len(), 3 * 2 * 3);
        assert!(table.aopc.iter().all(|e| e.value == 0.0 && e.n == 6));
        for c in &table.degradation {
            assert!(c.points.iter().all(|p| p.accuracy == 0.5));
        }
        let again = compare_explainers(&p, &data, &[&he, &flat, &random], &ks, &[Strategy::Pad, Strategy::Delete]).unwrap();
        assert_eq!(table, again);
        assert!(table.to_text().contains("random-words"));
    }

    #[test]
    fn full_budget_pad_drop() {
        let model = crate::predictor::BagOfWordsModel::new(2)
            .unwrap()
            .with_weight("good", vec![0.0, 2.0])
            .unwrap();
        let p = Predictor::new(Arc::new(model.clone()));
        let data = vec![Sample { sequence: TokenSequence::from_text("good film").unwrap(), label: Some(1) }];
        let flat = HeExplainer::new("flat", BuildConfig::new(AttributionMethod::Loo, HierarchyMode::Flat));
        let e = aopc(&p, &data, &flat, &[100.0], Strategy::Pad).unwrap();
        let full = model.probs(&data[0].sequence)[1];
        assert!((e[0].value - (full - 0.5)).abs() < 1e-12);
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let p = Predictor::new(Arc::new(ConstantClassifier::uniform(2)));
        let r = aopc(&p, &[], &RandomWords { seed: 0 }, &[10.0], Strategy::Pad);
        assert!(matches!(r, Err(Error::DegenerateInput(_))));
    }
}
