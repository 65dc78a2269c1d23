//! Seeded synthetic corpus with one planted word interaction.
//!
//! Labels come from a latent score: sentiment words add or subtract one,
//! and the two planted words add `planted_weight` if *either* is present.
//! Each planted word alone therefore carries the full effect, while erasing
//! one of them from a sentence that has both changes nothing. Single-word
//! attribution underrates them; the pair is only visible as a cluster.
//!
//! Labels are drawn from `sigmoid(latent / label_temperature)`, so a model
//! trained on the corpus stays calibrated instead of saturating.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::predictor::{BagOfWordsModel, TokenSequence, TrainConfig};
use crate::rng;

pub const FILLER: &[&str] = &[
    "the", "a", "movie", "film", "plot", "story", "actor", "scene", "was", "is", "and", "with", "of", "it", "this",
    "that", "in", "for", "its", "on", "cast", "script", "an", "as", "by", "director", "ending", "music", "pace", "tone",
];
pub const POSITIVE: &[&str] = &["good", "great", "charming", "moving", "fine", "clever"];
pub const NEGATIVE: &[&str] = &["bad", "dull", "weak", "bland", "messy", "tired"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedConfig {
    pub num_samples: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub first: String,
    pub second: String,
    /// Latent contribution when either planted word is present.
    pub planted_weight: f64,
    /// Latent offset, keeps the classes roughly balanced.
    pub offset: f64,
    /// Probability that a sentence holds both planted words.
    pub both_rate: f64,
    /// Probability that it holds exactly one (either word equally often).
    pub single_rate: f64,
    /// Fraction of two-word sentences where the planted words are adjacent.
    pub adjacent_fraction: f64,
    pub min_sentiment: usize,
    pub max_sentiment: usize,
    /// Zero gives the deterministic label `latent > 0`.
    pub label_temperature: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            num_samples: 500,
            min_len: 15,
            max_len: 25,
            first: "vivid".into(),
            second: "witty".into(),
            planted_weight: 6.0,
            offset: 3.0,
            both_rate: 0.5,
            single_rate: 0.3,
            adjacent_fraction: 0.5,
            min_sentiment: 2,
            max_sentiment: 4,
            label_temperature: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedSample {
    pub sample: Sample,
    pub first: Option<usize>,
    pub second: Option<usize>,
    pub latent: f64,
}

impl PlantedSample {
    /// Positions of both planted words when both are present.
    pub fn pair(&self) -> Option<(usize, usize)> {
        match (self.first, self.second) {
            (Some(a), Some(b)) => Some((a.min(b), a.max(b))),
            _ => None,
        }
    }
}

impl PlantedConfig {
    fn validate(&self) -> Result<()> {
        let ok = self.min_len >= self.max_sentiment + 4
            && self.min_len <= self.max_len
            && self.min_sentiment <= self.max_sentiment
            && (0.0..=1.0).contains(&self.both_rate)
            && (0.0..=1.0).contains(&self.single_rate)
            && self.both_rate + self.single_rate <= 1.0
            && (0.0..=1.0).contains(&self.adjacent_fraction)
            && self.label_temperature >= 0.0
            && !self.first.is_empty()
            && self.first != self.second;
        if ok {
            Ok(())
        } else {
            Err(Error::Contract(format!("invalid planted corpus config {self:?}")))
        }
    }
}

/// Generates `config.num_samples` labeled sentences; sample `i` depends only
/// on `(seed, i)`.
pub fn generate(config: &PlantedConfig) -> Result<Vec<PlantedSample>> {
    config.validate()?;
    (0..config.num_samples).map(|i| one(config, i as u64)).collect()
}

fn one(config: &PlantedConfig, index: u64) -> Result<PlantedSample> {
    let mut rng = rng::substream(config.seed, "synth", index);
    let len = rng.gen_range(config.min_len..=config.max_len);
    let u: f64 = rng.gen();
    let (has_first, has_second) = if u < config.both_rate {
        (true, true)
    } else if u < config.both_rate + config.single_rate {
        let first = rng.gen_bool(0.5);
        (first, !first)
    } else {
        (false, false)
    };

    let mut slots: Vec<Option<String>> = vec![None; len];
    let (mut first, mut second) = (None, None);
    if has_first && has_second {
        let (a, b) = if rng.gen_bool(config.adjacent_fraction) {
            let a = rng.gen_range(0..len - 1);
            (a, a + 1)
        } else {
            loop {
                let a = rng.gen_range(0..len);
                let b = rng.gen_range(0..len);
                if a.abs_diff(b) >= 2 {
                    break (a, b);
                }
            }
        };
        let (a, b) = if rng.gen_bool(0.5) { (a, b) } else { (b, a) };
        first = Some(a);
        second = Some(b);
    } else if has_first {
        first = Some(rng.gen_range(0..len));
    } else if has_second {
        second = Some(rng.gen_range(0..len));
    }
    if let Some(p) = first {
        slots[p] = Some(config.first.clone());
    }
    if let Some(p) = second {
        slots[p] = Some(config.second.clone());
    }

    let mut free: Vec<usize> = (0..len).filter(|&p| slots[p].is_none()).collect();
    free.shuffle(&mut rng);
    let n_sentiment = rng.gen_range(config.min_sentiment..=config.max_sentiment);
    let mut latent = -config.offset;
    if has_first || has_second {
        latent += config.planted_weight;
    }
    for &p in &free[..n_sentiment] {
        let word = if rng.gen_bool(0.5) {
            latent += 1.0;
            POSITIVE.choose(&mut rng).unwrap()
        } else {
            latent -= 1.0;
            NEGATIVE.choose(&mut rng).unwrap()
        };
        slots[p] = Some((*word).to_owned());
    }
    for &p in &free[n_sentiment..] {
        slots[p] = Some((*FILLER.choose(&mut rng).unwrap()).to_owned());
    }

    let label = if config.label_temperature > 0.0 {
        let p = 1.0 / (1.0 + (-latent / config.label_temperature).exp());
        usize::from(rng.gen::<f64>() < p)
    } else if latent == 0.0 {
        usize::from(rng.gen_bool(0.5))
    } else {
        usize::from(latent > 0.0)
    };
    let tokens: Vec<String> = slots.into_iter().map(Option::unwrap).collect();
    Ok(PlantedSample {
        sample: Sample {
            sequence: TokenSequence::from_tokens(&tokens)?,
            label: Some(label),
        },
        first,
        second,
        latent,
    })
}

/// Trains the built-in model on `samples` with a product feature for the
/// planted pair.
pub fn train_model(config: &PlantedConfig, samples: &[PlantedSample], seed: u64) -> Result<BagOfWordsModel> {
    let corpus: Vec<(TokenSequence, usize)> = samples
        .iter()
        .map(|s| (s.sample.sequence.clone(), s.sample.label.unwrap_or(0)))
        .collect();
    BagOfWordsModel::train(
        &corpus,
        &TrainConfig {
            seed,
            product_pairs: vec![(config.first.clone(), config.second.clone())],
            ..TrainConfig::default()
        },
    )
}
