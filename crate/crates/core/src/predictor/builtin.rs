//! Built-in bag-of-words multinomial logistic regression.
//!
//! The model is small enough that every probability it produces can be
//! recomputed by hand from its weight table, which is what the oracle tests
//! rely on. `[PAD]` and the other special tokens have no feature, so padding
//! a word and deleting it give the same prediction.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::sequence::is_special;
use super::{Classifier, Prediction, TokenSequence};
use crate::error::{Error, Result};
use crate::rng;

const MODEL_FORMAT: &str = "hiex-bow";
const MODEL_VERSION: u32 = 1;

/// Explicit pairwise feature: fires when both tokens are present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductFeature {
    pub first: String,
    pub second: String,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagOfWordsModel {
    format: String,
    version: u32,
    num_classes: usize,
    bias: Vec<f64>,
    weights: BTreeMap<String, Vec<f64>>,
    #[serde(default)]
    products: Vec<ProductFeature>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
    /// Token pairs that get an explicit product feature.
    #[serde(default)]
    pub product_pairs: Vec<(String, String)>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            learning_rate: 0.2,
            l2: 1e-4,
            seed: 0,
            product_pairs: Vec::new(),
        }
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

impl BagOfWordsModel {
    /// A model with all weights at zero.
    pub fn new(num_classes: usize) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Training(format!(
                "a classifier needs at least 2 classes, got {num_classes}"
            )));
        }
        Ok(Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            num_classes,
            bias: vec![0.0; num_classes],
            weights: BTreeMap::new(),
            products: Vec::new(),
        })
    }

    fn check_len(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.num_classes {
            return Err(Error::Training(format!(
                "weight vector has {} entries for {} classes",
                w.len(),
                self.num_classes
            )));
        }
        Ok(())
    }

    pub fn with_bias(mut self, bias: Vec<f64>) -> Result<Self> {
        self.check_len(&bias)?;
        self.bias = bias;
        Ok(self)
    }

    /// Sets a token's per-class weights. Special tokens are rejected: their
    /// contribution is pinned to zero.
    pub fn with_weight(mut self, token: &str, weights: Vec<f64>) -> Result<Self> {
        self.check_len(&weights)?;
        if is_special(token) {
            return Err(Error::Training(format!("{token} cannot carry a weight")));
        }
        self.weights.insert(token.to_owned(), weights);
        Ok(self)
    }

    pub fn with_product(mut self, first: &str, second: &str, weights: Vec<f64>) -> Result<Self> {
        self.check_len(&weights)?;
        if is_special(first) || is_special(second) || first == second {
            return Err(Error::Training(format!(
                "invalid product feature ({first}, {second})"
            )));
        }
        self.products.push(ProductFeature {
            first: first.to_owned(),
            second: second.to_owned(),
            weights,
        });
        Ok(self)
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weight(&self, token: &str) -> Option<&[f64]> {
        self.weights.get(token).map(Vec::as_slice)
    }

    pub fn weights(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.weights
    }

    pub fn products(&self) -> &[ProductFeature] {
        &self.products
    }

    pub fn logits(&self, seq: &TokenSequence) -> Vec<f64> {
        let mut z = self.bias.clone();
        for t in seq.tokens() {
            if let Some(w) = self.weights.get(t) {
                for (zc, wc) in z.iter_mut().zip(w) {
                    *zc += wc;
                }
            }
        }
        for p in &self.products {
            let has = |tok: &str| seq.tokens().iter().any(|t| t == tok);
            if has(&p.first) && has(&p.second) {
                for (zc, wc) in z.iter_mut().zip(&p.weights) {
                    *zc += wc;
                }
            }
        }
        z
    }

    pub fn probs(&self, seq: &TokenSequence) -> Vec<f64> {
        softmax(&self.logits(seq))
    }

    /// Fits the model with seeded stochastic gradient descent.
    pub fn train(corpus: &[(TokenSequence, usize)], config: &TrainConfig) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::Training("empty corpus".into()));
        }
        let num_classes = corpus.iter().map(|(_, y)| *y).max().unwrap_or(0) + 1;
        let mut present = vec![false; num_classes];
        for (_, y) in corpus {
            present[*y] = true;
        }
        if present.iter().filter(|&&p| p).count() < 2 {
            return Err(Error::Training("corpus contains a single class".into()));
        }

        let mut vocab: BTreeMap<&str, usize> = BTreeMap::new();
        for (s, _) in corpus {
            for t in s.tokens() {
                if !is_special(t) {
                    let next = vocab.len();
                    vocab.entry(t.as_str()).or_insert(next);
                }
            }
        }
        let n_words = vocab.len();
        let n_features = n_words + config.product_pairs.len();

        // Sparse (feature, value) rows.
        let rows: Vec<Vec<(usize, f64)>> = corpus
            .iter()
            .map(|(s, _)| {
                let mut counts: HashMap<usize, f64> = HashMap::new();
                for t in s.tokens() {
                    if let Some(&f) = vocab.get(t.as_str()) {
                        *counts.entry(f).or_default() += 1.0;
                    }
                }
                for (k, (a, b)) in config.product_pairs.iter().enumerate() {
                    let has = |tok: &str| s.tokens().iter().any(|t| t == tok);
                    if has(a) && has(b) {
                        counts.insert(n_words + k, 1.0);
                    }
                }
                let mut row: Vec<(usize, f64)> = counts.into_iter().collect();
                row.sort_by_key(|&(f, _)| f);
                row
            })
            .collect();

        let k = num_classes;
        let mut w = vec![0.0; n_features * k];
        let mut bias = vec![0.0; k];
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        let mut rng = rng::substream(config.seed, "train", 0);
        let mut z = vec![0.0; k];

        for epoch in 0..config.epochs {
            order.shuffle(&mut rng);
            let lr = config.learning_rate / (1.0 + 0.05 * epoch as f64);
            for &i in &order {
                let row = &rows[i];
                let y = corpus[i].1;
                z.copy_from_slice(&bias);
                for &(f, v) in row {
                    for c in 0..k {
                        z[c] += w[f * k + c] * v;
                    }
                }
                let p = softmax(&z);
                for c in 0..k {
                    let g = p[c] - if c == y { 1.0 } else { 0.0 };
                    bias[c] -= lr * g;
                    for &(f, v) in row {
                        let wi = &mut w[f * k + c];
                        *wi -= lr * (g * v + config.l2 * *wi);
                    }
                }
            }
        }

        let mut model = Self::new(num_classes)?;
        model.bias = bias;
        for (tok, &f) in &vocab {
            model
                .weights
                .insert((*tok).to_owned(), w[f * k..(f + 1) * k].to_vec());
        }
        for (j, (a, b)) in config.product_pairs.iter().enumerate() {
            let f = n_words + j;
            model.products.push(ProductFeature {
                first: a.clone(),
                second: b.clone(),
                weights: w[f * k..(f + 1) * k].to_vec(),
            });
        }
        Ok(model)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(text)?;
        if model.format != MODEL_FORMAT || model.version != MODEL_VERSION {
            return Err(Error::Training(format!(
                "unsupported model format {} v{}",
                model.format, model.version
            )));
        }
        if model.weights.keys().any(|t| is_special(t)) {
            return Err(Error::Training("special tokens cannot carry weights".into()));
        }
        Ok(model)
    }
}

impl Classifier for BagOfWordsModel {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict_batch(&self, sequences: &[TokenSequence]) -> Result<Vec<Prediction>> {
        sequences
            .iter()
            .map(|s| Prediction::from_probs(self.probs(s)))
            .collect()
    }

    fn describe(&self) -> String {
        format!(
            "builtin-bow(classes={}, vocab={}, products={})",
            self.num_classes,
            self.weights.len(),
            self.products.len()
        )
    }
}
