//! Fixtures and independent reference computations shared by the
//! integration tests and the acceptance suite.
//!
//! The oracles here talk to models directly (`BagOfWordsModel::probs` or a
//! closure) and never go through `Predictor` or `ScoringContext`.

#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use hiex_core::attribution::{marginalize, Strategy, TokenSet};
use hiex_core::dataset::load_jsonl;
use hiex_core::predictor::{BagOfWordsModel, FnClassifier, TokenSequence, TrainConfig};
use hiex_core::synth::{self, PlantedConfig, FILLER, NEGATIVE, POSITIVE};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// The built-in model trained on the sentiment fixture corpus.
pub fn toy_model() -> BagOfWordsModel {
    let samples = load_jsonl(fixture("toy_corpus.jsonl")).unwrap();
    let corpus = hiex_core::dataset::labeled(&samples).unwrap();
    BagOfWordsModel::train(&corpus, &TrainConfig { seed: 7, ..TrainConfig::default() }).unwrap()
}

pub fn fixture_sentences() -> Vec<TokenSequence> {
    load_jsonl(fixture("sentences.jsonl"))
        .unwrap()
        .into_iter()
        .map(|s| s.sequence)
        .collect()
}

/// Hand-set model with small weights, so probabilities stay near 0.5 and
/// the model is close to linear in word presence.
pub fn near_linear_model() -> BagOfWordsModel {
    let mut m = BagOfWordsModel::new(2).unwrap();
    for (i, w) in POSITIVE.iter().enumerate() {
        m = m.with_weight(w, vec![0.0, 0.15 + 0.03 * i as f64]).unwrap();
    }
    for (i, w) in NEGATIVE.iter().enumerate() {
        m = m.with_weight(w, vec![0.12 + 0.03 * i as f64, 0.0]).unwrap();
    }
    m
}

/// Model trained on a planted corpus, together with that corpus' config.
pub fn planted_model(seed: u64) -> (PlantedConfig, BagOfWordsModel) {
    let cfg = PlantedConfig {
        num_samples: 600,
        seed,
        ..PlantedConfig::default()
    };
    let data = synth::generate(&cfg).unwrap();
    let model = synth::train_model(&cfg, &data, seed).unwrap();
    (cfg, model)
}

/// Random plain sentence of `n` words drawn from the synthetic vocabulary,
/// with the planted words appearing often enough to matter.
pub fn random_sentence(rng: &mut ChaCha8Rng, n: usize, planted: (&str, &str)) -> TokenSequence {
    let mut vocab: Vec<&str> = FILLER[..8].to_vec();
    vocab.extend_from_slice(POSITIVE);
    vocab.extend_from_slice(NEGATIVE);
    vocab.extend_from_slice(&[planted.0, planted.1, planted.0, planted.1]);
    let tokens: Vec<&str> = (0..n).map(|_| *vocab.choose(rng).unwrap()).collect();
    TokenSequence::from_tokens(&tokens).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_len(rng: &mut ChaCha8Rng, lo: usize, hi: usize) -> usize {
    rng.gen_range(lo..=hi)
}

/// `p(target | seq with set marginalized)`, straight from the model.
pub fn prob_without(
    probs: &dyn Fn(&TokenSequence) -> Vec<f64>,
    seq: &TokenSequence,
    set: &TokenSet,
    strategy: Strategy,
    target: usize,
) -> f64 {
    if set.is_empty() {
        return probs(seq)[target];
    }
    probs(&marginalize(seq, set, strategy).unwrap())[target]
}

/// Leave-one-out terms of the pair interaction by definition:
/// `t_i = LOO(ci) − LOO(ci | cj erased)`, likewise for `t_j`.
pub fn oracle_terms(
    probs: &dyn Fn(&TokenSequence) -> Vec<f64>,
    seq: &TokenSequence,
    ci: &TokenSet,
    cj: &TokenSet,
    strategy: Strategy,
    target: usize,
) -> (f64, f64) {
    let p = |s: &TokenSet| prob_without(probs, seq, s, strategy, target);
    let empty = TokenSet::new([]);
    let both = ci.union(cj);
    let loo_i = p(&empty) - p(ci);
    let loo_j = p(&empty) - p(cj);
    let cond_i = p(cj) - p(&both);
    let cond_j = p(ci) - p(&both);
    (loo_i - cond_i, loo_j - cond_j)
}

/// Exhaustive argmax of `|t_i| + |t_j|` over all pairs of `live`, ties to
/// the pair with the smaller (first index, last index), then the smaller
/// member lists.
pub fn oracle_best_pair(
    probs: &dyn Fn(&TokenSequence) -> Vec<f64>,
    seq: &TokenSequence,
    live: &[TokenSet],
    strategy: Strategy,
    target: usize,
) -> (TokenSet, TokenSet) {
    let mut scored = Vec::new();
    for a in 0..live.len() {
        for b in a + 1..live.len() {
            let (x, y) = if live[a].first() < live[b].first() {
                (&live[a], &live[b])
            } else {
                (&live[b], &live[a])
            };
            let (ti, tj) = oracle_terms(probs, seq, x, y, strategy, target);
            let lo = x.first().unwrap();
            let hi = x.last().unwrap().max(y.last().unwrap());
            scored.push((ti.abs() + tj.abs(), lo, hi, x.clone(), y.clone()));
        }
    }
    scored.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .unwrap()
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
            .then_with(|| a.3.cmp(&b.3))
            .then_with(|| a.4.cmp(&b.4))
    });
    let best = scored.swap_remove(0);
    (best.3, best.4)
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va.sqrt() * vb.sqrt())
}

/// Two-class model whose positive probability is `0.5 + Σ weight(word)`:
/// exactly additive in word presence.
pub fn linear_probability_model(weights: &[(&str, f64)]) -> FnClassifier {
    let table: HashMap<String, f64> = weights.iter().map(|(w, v)| ((*w).to_owned(), *v)).collect();
    FnClassifier::new("linear-probability", 2, move |s: &TokenSequence| {
        let p1 = 0.5 + s.tokens().iter().filter_map(|t| table.get(t)).sum::<f64>();
        vec![1.0 - p1, p1]
    })
}

pub fn shared<C: hiex_core::predictor::Classifier + 'static>(c: C) -> Arc<dyn hiex_core::predictor::Classifier> {
    Arc::new(c)
}
