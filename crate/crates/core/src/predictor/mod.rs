//! Black-box access to classifiers.
//!
//! A [`Classifier`] is anything that maps token sequences to class
//! probabilities. [`Predictor`] wraps one with batching, a prediction cache
//! keyed by [`TokenSequence::canonical_key`] and forward-pass accounting.

mod builtin;
mod http;
mod sequence;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;

pub use builtin::{BagOfWordsModel, TrainConfig};
pub use http::{HealthResponse, HttpClassifier, PredictRequest, PredictResponse, WireInstance};
pub use sequence::{is_special, TokenSequence, PAD_TOKEN, SPECIAL_TOKENS};

/// Tolerance on the sum of a probability vector.
pub const PROB_SUM_TOLERANCE: f64 = 1e-6;

/// Default number of sequences per classifier call.
pub const DEFAULT_BATCH_SIZE: usize = 32;

/// Class-probability vector with its predicted label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probs: Vec<f64>,
    pub predicted: usize,
}

impl Prediction {
    /// Validates `probs` and picks the argmax (lowest index on ties).
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Protocol {
                message: "empty probability vector".into(),
                payload: "[]".into(),
            });
        }
        let bad = |message: String, probs: &[f64]| Error::Protocol {
            message,
            payload: format!("{probs:?}"),
        };
        if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(bad(format!("probability {p} outside [0, 1]"), &probs));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE {
            return Err(bad(format!("probabilities sum to {sum}"), &probs));
        }
        let mut predicted = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[predicted] {
                predicted = i;
            }
        }
        Ok(Self { probs, predicted })
    }

    pub fn prob(&self, class: usize) -> f64 {
        self.probs[class]
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }
}

/// A black-box text classifier.
pub trait Classifier: Send + Sync {
    fn num_classes(&self) -> usize;

    /// One prediction per input, in input order.
    fn predict_batch(&self, sequences: &[TokenSequence]) -> Result<Vec<Prediction>>;

    /// Short description recorded in provenance.
    fn describe(&self) -> String;
}

/// Returns the same probabilities for every input.
#[derive(Debug, Clone)]
pub struct ConstantClassifier {
    prediction: Prediction,
}

impl ConstantClassifier {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        Ok(Self {
            prediction: Prediction::from_probs(probs)?,
        })
    }

    pub fn uniform(num_classes: usize) -> Self {
        Self {
            prediction: Prediction {
                probs: vec![1.0 / num_classes as f64; num_classes],
                predicted: 0,
            },
        }
    }
}

impl Classifier for ConstantClassifier {
    fn num_classes(&self) -> usize {
        self.prediction.num_classes()
    }

    fn predict_batch(&self, sequences: &[TokenSequence]) -> Result<Vec<Prediction>> {
        Ok(vec![self.prediction.clone(); sequences.len()])
    }

    fn describe(&self) -> String {
        format!("constant{:?}", self.prediction.probs)
    }
}

type ProbFn = dyn Fn(&TokenSequence) -> Vec<f64> + Send + Sync;

/// Adapts a closure returning probabilities into a [`Classifier`].
pub struct FnClassifier {
    num_classes: usize,
    name: String,
    f: Box<ProbFn>,
}

impl FnClassifier {
    pub fn new(
        name: impl Into<String>,
        num_classes: usize,
        f: impl Fn(&TokenSequence) -> Vec<f64> + Send + Sync + 'static,
    ) -> Self {
        Self {
            num_classes,
            name: name.into(),
            f: Box::new(f),
        }
    }
}

impl Classifier for FnClassifier {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn predict_batch(&self, sequences: &[TokenSequence]) -> Result<Vec<Prediction>> {
        sequences
            .iter()
            .map(|s| Prediction::from_probs((self.f)(s)))
            .collect()
    }

    fn describe(&self) -> String {
        self.name.clone()
    }
}

/// Counters for model evaluations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorStats {
    /// Distinct sequences actually sent to the model.
    pub forward_passes: u64,
    pub cache_hits: u64,
}

/// Shareable, cached handle to a classifier.
///
/// Reads of the cache run concurrently; inserts take a write lock. A
/// forward pass is counted only when its result is the first one stored for
/// that key, so the counter equals the number of distinct sequences
/// evaluated even when two callers race on the same miss. The loser of such
/// a race receives the stored value, which keeps outputs byte-identical for
/// every caller.
pub struct Predictor {
    classifier: Arc<dyn Classifier>,
    cache: Option<RwLock<HashMap<String, Prediction>>>,
    batch_size: usize,
    forward_passes: AtomicU64,
    cache_hits: AtomicU64,
}

impl std::fmt::Debug for Predictor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Predictor")
            .field("classifier", &self.classifier.describe())
            .field("cached", &self.cache.is_some())
            .field("batch_size", &self.batch_size)
            .field("stats", &self.stats())
            .finish()
    }
}

impl Predictor {
    pub fn new(classifier: Arc<dyn Classifier>) -> Self {
        Self {
            classifier,
            cache: Some(RwLock::new(HashMap::new())),
            batch_size: DEFAULT_BATCH_SIZE,
            forward_passes: AtomicU64::new(0),
            cache_hits: AtomicU64::new(0),
        }
    }

    /// A handle that evaluates every request. Duplicates inside a single
    /// `predict_many` call are still evaluated once.
    pub fn uncached(classifier: Arc<dyn Classifier>) -> Self {
        Self {
            cache: None,
            ..Self::new(classifier)
        }
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self
    }

    pub fn classifier(&self) -> Arc<dyn Classifier> {
        Arc::clone(&self.classifier)
    }

    pub fn is_cached(&self) -> bool {
        self.cache.is_some()
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    pub fn stats(&self) -> PredictorStats {
        PredictorStats {
            forward_passes: self.forward_passes.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
        }
    }

    pub fn describe(&self) -> String {
        self.classifier.describe()
    }

    pub fn predict(&self, sequence: &TokenSequence) -> Result<Prediction> {
        let mut out = self.predict_many(std::slice::from_ref(sequence))?;
        Ok(out.pop().expect("one prediction per input"))
    }

    /// Cached batch prediction, order-preserving.
    pub fn predict_many(&self, sequences: &[TokenSequence]) -> Result<Vec<Prediction>> {
        let keys: Vec<String> = sequences.iter().map(TokenSequence::canonical_key).collect();
        let mut out: Vec<Option<Prediction>> = vec![None; sequences.len()];

        if let Some(cache) = &self.cache {
            let cache = cache.read().expect("prediction cache poisoned");
            let mut hits = 0;
            for (slot, key) in out.iter_mut().zip(&keys) {
                if let Some(p) = cache.get(key) {
                    *slot = Some(p.clone());
                    hits += 1;
                }
            }
            self.cache_hits.fetch_add(hits, Ordering::Relaxed);
        }

        // Unique misses, first occurrence wins.
        let mut first_seen: HashMap<&str, usize> = HashMap::new();
        let mut pending: Vec<usize> = Vec::new();
        for (i, key) in keys.iter().enumerate() {
            if out[i].is_none() && !first_seen.contains_key(key.as_str()) {
                first_seen.insert(key, pending.len());
                pending.push(i);
            }
        }
        if pending.is_empty() {
            return Ok(out.into_iter().map(Option::unwrap).collect());
        }

        let batches: Vec<Vec<TokenSequence>> = pending
            .chunks(self.batch_size)
            .map(|chunk| chunk.iter().map(|&i| sequences[i].clone()).collect())
            .collect();
        let evaluated = par::try_map(&batches, |batch| {
            let preds = self.classifier.predict_batch(batch)?;
            if preds.len() != batch.len() {
                return Err(Error::Protocol {
                    message: format!("{} predictions for {} inputs", preds.len(), batch.len()),
                    payload: format!("{preds:?}"),
                });
            }
            Ok(preds)
        })?;
        let mut fresh: Vec<Prediction> = evaluated.into_iter().flatten().collect();

        match &self.cache {
            Some(cache) => {
                let mut cache = cache.write().expect("prediction cache poisoned");
                let (mut passes, mut raced) = (0, 0);
                for (slot, &i) in fresh.iter_mut().zip(&pending) {
                    match cache.entry(keys[i].clone()) {
                        std::collections::hash_map::Entry::Occupied(e) => {
                            *slot = e.get().clone();
                            raced += 1;
                        }
                        std::collections::hash_map::Entry::Vacant(e) => {
                            e.insert(slot.clone());
                            passes += 1;
                        }
                    }
                }
                self.forward_passes.fetch_add(passes, Ordering::Relaxed);
                self.cache_hits.fetch_add(raced, Ordering::Relaxed);
            }
            None => {
                self.forward_passes
                    .fetch_add(pending.len() as u64, Ordering::Relaxed);
            }
        }

        let mut dup_hits = 0;
        for (i, key) in keys.iter().enumerate() {
            if out[i].is_none() {
                let j = first_seen[key.as_str()];
                if pending[j] != i {
                    dup_hits += 1;
                }
                out[i] = Some(fresh[j].clone());
            }
        }
        if self.cache.is_some() {
            self.cache_hits.fetch_add(dup_hits, Ordering::Relaxed);
        }
        Ok(out.into_iter().map(Option::unwrap).collect())
    }
}
