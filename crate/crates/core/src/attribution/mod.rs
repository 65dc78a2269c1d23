//! Base attribution over token clusters.
//!
//! A cluster's attribution is the support it lends to the target class:
//! leave-one-out measures the probability drop when the cluster is
//! marginalized, LIME sums the coefficients of a locally fitted linear
//! surrogate. Positive scores support the target class.

mod lime;

use std::collections::HashMap;
use std::fmt;
use std::sync::{Arc, Mutex};

use once_cell::sync::OnceCell;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::{Prediction, Predictor, TokenSequence, PAD_TOKEN};

pub use lime::{lime_weights, LimeConfig};

/// How a cluster is removed from the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// Drop the positions and compact the sequence.
    #[serde(rename = "del")]
    Delete,
    /// Replace each position with `[PAD]`.
    #[default]
    Pad,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Delete => "del",
            Strategy::Pad => "pad",
        })
    }
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "del" | "delete" => Ok(Strategy::Delete),
            "pad" => Ok(Strategy::Pad),
            other => Err(Error::Contract(format!("unknown strategy {other:?}"))),
        }
    }
}

/// A set of token positions, kept sorted and free of duplicates.
///
/// Ordering is lexicographic on the member list.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct TokenSet(Vec<usize>);

impl TokenSet {
    pub fn new(members: impl IntoIterator<Item = usize>) -> Self {
        let mut v: Vec<usize> = members.into_iter().collect();
        v.sort_unstable();
        v.dedup();
        Self(v)
    }

    pub fn singleton(i: usize) -> Self {
        Self(vec![i])
    }

    pub fn members(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> Option<usize> {
        self.0.first().copied()
    }

    pub fn last(&self) -> Option<usize> {
        self.0.last().copied()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.0.binary_search(&i).is_ok()
    }

    pub fn is_disjoint(&self, other: &TokenSet) -> bool {
        let (mut a, mut b) = (0, 0);
        while a < self.0.len() && b < other.0.len() {
            match self.0[a].cmp(&other.0[b]) {
                std::cmp::Ordering::Less => a += 1,
                std::cmp::Ordering::Greater => b += 1,
                std::cmp::Ordering::Equal => return false,
            }
        }
        true
    }

    pub fn is_subset(&self, other: &TokenSet) -> bool {
        self.0.iter().all(|&i| other.contains(i))
    }

    pub fn union(&self, other: &TokenSet) -> TokenSet {
        TokenSet::new(self.0.iter().chain(&other.0).copied())
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }
}

impl FromIterator<usize> for TokenSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        TokenSet::new(iter)
    }
}

fn check_cluster(seq: &TokenSequence, set: &TokenSet) -> Result<()> {
    for i in set.iter() {
        if i >= seq.len() {
            return Err(Error::InvalidCluster {
                members: set.members().to_vec(),
                reason: format!("position {i} is out of range for length {}", seq.len()),
            });
        }
        if !seq.is_maskable(i) {
            return Err(Error::InvalidCluster {
                members: set.members().to_vec(),
                reason: format!("position {i} ({:?}) is not maskable", seq.tokens()[i]),
            });
        }
    }
    Ok(())
}

/// Removes `cluster` from `seq` with the given strategy.
///
/// `Delete` returns a shorter sequence with relative order kept; `Pad`
/// keeps the length and writes `[PAD]` at exactly the cluster positions.
pub fn marginalize(seq: &TokenSequence, cluster: &TokenSet, strategy: Strategy) -> Result<TokenSequence> {
    check_cluster(seq, cluster)?;
    Ok(marginalize_unchecked(seq, cluster, strategy))
}

fn marginalize_unchecked(seq: &TokenSequence, cluster: &TokenSet, strategy: Strategy) -> TokenSequence {
    match strategy {
        Strategy::Pad => {
            let mut tokens = seq.tokens().to_vec();
            for i in cluster.iter() {
                tokens[i] = PAD_TOKEN.to_owned();
            }
            TokenSequence::from_parts_unchecked(
                tokens,
                seq.segment_ids().to_vec(),
                seq.maskable().to_vec(),
            )
        }
        Strategy::Delete => {
            let keep: Vec<usize> = (0..seq.len()).filter(|&i| !cluster.contains(i)).collect();
            TokenSequence::from_parts_unchecked(
                keep.iter().map(|&i| seq.tokens()[i].clone()).collect(),
                keep.iter().map(|&i| seq.segment_ids()[i]).collect(),
                keep.iter().map(|&i| seq.maskable()[i]).collect(),
            )
        }
    }
}

/// Maps positions of the original sequence to positions after `deleted` has
/// been removed. `set` must be disjoint from `deleted`.
pub fn reindex_after_delete(set: &TokenSet, deleted: &TokenSet) -> TokenSet {
    set.iter()
        .map(|p| p - deleted.members().partition_point(|&d| d < p))
        .collect()
}

fn reindex(set: &TokenSet, removed: &TokenSet, strategy: Strategy) -> TokenSet {
    match strategy {
        Strategy::Pad => set.clone(),
        Strategy::Delete => reindex_after_delete(set, removed),
    }
}

/// The base attribution algorithm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algo", rename_all = "lowercase")]
pub enum AttributionMethod {
    Loo,
    Lime(LimeConfig),
}

impl AttributionMethod {
    pub fn name(&self) -> &'static str {
        match self {
            AttributionMethod::Loo => "loo",
            AttributionMethod::Lime(_) => "lime",
        }
    }
}

/// One LIME fit per conditioning set, computed at most once.
type LimeSlot = Arc<OnceCell<Arc<Vec<f64>>>>;

/// Everything needed to score clusters of one input against one class.
///
/// The original prediction is computed once; LIME surrogates are fitted at
/// most once per frozen cluster and shared by every query that needs them.
/// Contexts are `Sync` and meant to be shared across the pair evaluations of
/// a hierarchy build.
pub struct ScoringContext<'a> {
    predictor: &'a Predictor,
    seq: &'a TokenSequence,
    method: AttributionMethod,
    strategy: Strategy,
    target: usize,
    base: Prediction,
    lime_fits: Mutex<HashMap<TokenSet, LimeSlot>>,
}

impl<'a> ScoringContext<'a> {
    /// Scores against the class the model predicts for `seq`.
    pub fn new(
        predictor: &'a Predictor,
        seq: &'a TokenSequence,
        method: AttributionMethod,
        strategy: Strategy,
    ) -> Result<Self> {
        let base = predictor.predict(seq)?;
        let target = base.predicted;
        Self::build(predictor, seq, method, strategy, target, base)
    }

    pub fn with_target(
        predictor: &'a Predictor,
        seq: &'a TokenSequence,
        method: AttributionMethod,
        strategy: Strategy,
        target: usize,
    ) -> Result<Self> {
        let base = predictor.predict(seq)?;
        Self::build(predictor, seq, method, strategy, target, base)
    }

    fn build(
        predictor: &'a Predictor,
        seq: &'a TokenSequence,
        method: AttributionMethod,
        strategy: Strategy,
        target: usize,
        base: Prediction,
    ) -> Result<Self> {
        if target >= base.num_classes() {
            return Err(Error::Contract(format!(
                "target class {target} out of range for {} classes",
                base.num_classes()
            )));
        }
        if let AttributionMethod::Lime(cfg) = &method {
            cfg.validate()?;
        }
        Ok(Self {
            predictor,
            seq,
            method,
            strategy,
            target,
            base,
            lime_fits: Mutex::new(HashMap::new()),
        })
    }

    pub fn predictor(&self) -> &'a Predictor {
        self.predictor
    }

    pub fn sequence(&self) -> &'a TokenSequence {
        self.seq
    }

    pub fn method(&self) -> &AttributionMethod {
        &self.method
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn base_prediction(&self) -> &Prediction {
        &self.base
    }

    /// p(target | seq).
    pub fn base_prob(&self) -> f64 {
        self.base.prob(self.target)
    }

    pub fn check(&self, set: &TokenSet) -> Result<()> {
        check_cluster(self.seq, set)
    }

    /// p(target | seq with `set` marginalized).
    pub fn prob_without(&self, set: &TokenSet) -> Result<f64> {
        let s = marginalize(self.seq, set, self.strategy)?;
        Ok(self.predictor.predict(&s)?.prob(self.target))
    }

    /// `seq` with `outer` marginalized, then `inner` marginalized from the
    /// result (positions of `inner` refer to the original sequence).
    fn nested(&self, outer: &TokenSet, inner: &TokenSet) -> TokenSequence {
        let first = marginalize_unchecked(self.seq, outer, self.strategy);
        marginalize_unchecked(&first, &reindex(inner, outer, self.strategy), self.strategy)
    }

    fn check_pair(&self, ci: &TokenSet, cj: &TokenSet) -> Result<()> {
        if ci.is_empty() || cj.is_empty() {
            return Err(Error::InvalidPair("clusters must be non-empty".into()));
        }
        if !ci.is_disjoint(cj) {
            return Err(Error::InvalidPair(format!(
                "{:?} and {:?} overlap",
                ci.members(),
                cj.members()
            )));
        }
        self.check(ci)?;
        self.check(cj)
    }

    /// Attribution of `set` on the unmodified input.
    pub fn cluster_score(&self, set: &TokenSet) -> Result<f64> {
        self.check(set)?;
        match &self.method {
            AttributionMethod::Loo => Ok(self.base_prob() - self.prob_without(set)?),
            AttributionMethod::Lime(_) => {
                let w = self.lime_fit(&TokenSet::default())?;
                Ok(set.iter().map(|i| w[i]).sum())
            }
        }
    }

    /// Attribution of `ci` once `cj` has been marginalized.
    pub fn conditional_cluster_score(&self, ci: &TokenSet, cj: &TokenSet) -> Result<f64> {
        self.check_pair(ci, cj)?;
        match &self.method {
            AttributionMethod::Loo => {
                let seqs = [
                    marginalize_unchecked(self.seq, cj, self.strategy),
                    self.nested(cj, ci),
                ];
                let p = self.predictor.predict_many(&seqs)?;
                Ok(p[0].prob(self.target) - p[1].prob(self.target))
            }
            AttributionMethod::Lime(_) => {
                let w = self.lime_fit(cj)?;
                Ok(ci.iter().map(|i| w[i]).sum())
            }
        }
    }

    /// The two differences `Algo(ci) - Algo^{-cj}(ci)` and
    /// `Algo(cj) - Algo^{-ci}(cj)`.
    ///
    /// For leave-one-out the four marginalized inputs go to the predictor as
    /// one batch; the two doubly-marginalized variants are the same sequence
    /// so a pair costs three model evaluations beyond the base prediction.
    pub fn pair_terms(&self, ci: &TokenSet, cj: &TokenSet) -> Result<(f64, f64)> {
        self.check_pair(ci, cj)?;
        match &self.method {
            AttributionMethod::Loo => {
                let seqs = [
                    marginalize_unchecked(self.seq, ci, self.strategy),
                    marginalize_unchecked(self.seq, cj, self.strategy),
                    self.nested(cj, ci),
                    self.nested(ci, cj),
                ];
                let p: Vec<f64> = self
                    .predictor
                    .predict_many(&seqs)?
                    .iter()
                    .map(|p| p.prob(self.target))
                    .collect();
                let base = self.base_prob();
                let term_i = (base - p[0]) - (p[1] - p[2]);
                let term_j = (base - p[1]) - (p[0] - p[3]);
                Ok((term_i, term_j))
            }
            AttributionMethod::Lime(_) => {
                let full = self.lime_fit(&TokenSet::default())?;
                let without_j = self.lime_fit(cj)?;
                let without_i = self.lime_fit(ci)?;
                let sum = |w: &[f64], s: &TokenSet| s.iter().map(|i| w[i]).sum::<f64>();
                Ok((
                    sum(&full, ci) - sum(&without_j, ci),
                    sum(&full, cj) - sum(&without_i, cj),
                ))
            }
        }
    }

    /// Per-position LIME weights with `frozen` held marginalized.
    pub fn lime_fit(&self, frozen: &TokenSet) -> Result<Arc<Vec<f64>>> {
        let AttributionMethod::Lime(cfg) = &self.method else {
            return Err(Error::Contract("LIME weights requested from a LOO context".into()));
        };
        let cell = {
            let mut fits = self.lime_fits.lock().expect("lime cache poisoned");
            Arc::clone(fits.entry(frozen.clone()).or_default())
        };
        cell.get_or_try_init(|| {
            lime_weights(self.predictor, self.seq, self.target, cfg, self.strategy, frozen)
                .map(Arc::new)
        })
        .cloned()
    }
}

/// `p(target | seq) - p(target | seq without cluster)`.
pub fn loo_score(
    predictor: &Predictor,
    seq: &TokenSequence,
    cluster: &TokenSet,
    target: usize,
    strategy: Strategy,
) -> Result<f64> {
    ScoringContext::with_target(predictor, seq, AttributionMethod::Loo, strategy, target)?
        .cluster_score(cluster)
}

/// LIME weights per position (zero at non-maskable positions), explaining
/// the predicted class.
pub fn lime_scores(predictor: &Predictor, seq: &TokenSequence, config: &LimeConfig) -> Result<Vec<f64>> {
    if seq.maskable_count() < 2 {
        return Err(Error::DegenerateInput(
            "LIME needs at least two maskable tokens".into(),
        ));
    }
    let target = predictor.predict(seq)?.predicted;
    lime_weights(predictor, seq, target, config, Strategy::Pad, &TokenSet::default())
}

pub fn cluster_score(
    method: &AttributionMethod,
    predictor: &Predictor,
    seq: &TokenSequence,
    cluster: &TokenSet,
    strategy: Strategy,
) -> Result<f64> {
    ScoringContext::new(predictor, seq, method.clone(), strategy)?.cluster_score(cluster)
}

/// `Algo^{-cj}(ci)`: the attribution of `ci` with `cj` marginalized.
pub fn conditional_cluster_score(
    method: &AttributionMethod,
    predictor: &Predictor,
    seq: &TokenSequence,
    ci: &TokenSet,
    cj: &TokenSet,
    strategy: Strategy,
) -> Result<f64> {
    ScoringContext::new(predictor, seq, method.clone(), strategy)?.conditional_cluster_score(ci, cj)
}
