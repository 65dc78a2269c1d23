//! Pairwise cluster interaction.
//!
//! The general score measures how much marginalizing one cluster changes the
//! attribution of the other, in both directions:
//!
//! ```text
//! term_i = Algo(ci) - Algo^{-cj}(ci)
//! term_j = Algo(cj) - Algo^{-ci}(cj)
//! ```
//!
//! [`InteractionMode::Absolute`] sums `|term_i| + |term_j|`.
//! [`InteractionMode::Signed`] reports the signed mean of the two terms.
//! [`InteractionMode::Erasure`] is the four-prediction second difference
//! `p(x \ ci∪cj) - p(x \ ci) - p(x \ cj) + p(x)`; with leave-one-out
//! attribution each term above equals it exactly, which
//! [`verify_erasure_identity`] checks numerically.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionMethod, ScoringContext, Strategy, TokenSet};
use crate::error::{Error, Result};
use crate::predictor::{Predictor, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum InteractionMode {
    #[default]
    Absolute,
    Signed,
    Erasure,
}

impl fmt::Display for InteractionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InteractionMode::Absolute => "absolute",
            InteractionMode::Signed => "signed",
            InteractionMode::Erasure => "erasure",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InteractionScore {
    /// The score used for ranking pairs.
    pub value: f64,
    /// Before taking absolute values.
    pub signed_value: f64,
    pub mode: InteractionMode,
    /// `[term_i, term_j]` in canonical pair order; absent for erasure.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub terms: Option<[f64; 2]>,
}

/// Orders a pair by smallest member so that both argument orders run the
/// exact same floating-point computation.
fn canonical<'t>(a: &'t TokenSet, b: &'t TokenSet) -> (&'t TokenSet, &'t TokenSet) {
    if (a.first(), a) <= (b.first(), b) {
        (a, b)
    } else {
        (b, a)
    }
}

/// Interaction between two disjoint clusters under `mode`.
pub fn pair_interaction(
    ctx: &ScoringContext<'_>,
    ci: &TokenSet,
    cj: &TokenSet,
    mode: InteractionMode,
) -> Result<InteractionScore> {
    match mode {
        InteractionMode::Erasure => erasure_interaction(ctx, ci, cj),
        InteractionMode::Absolute | InteractionMode::Signed => {
            let (a, b) = canonical(ci, cj);
            let (ti, tj) = ctx.pair_terms(a, b)?;
            Ok(from_terms(ti, tj, mode))
        }
    }
}

fn from_terms(ti: f64, tj: f64, mode: InteractionMode) -> InteractionScore {
    let signed = 0.5 * (ti + tj);
    let value = match mode {
        InteractionMode::Absolute => ti.abs() + tj.abs(),
        _ => signed,
    };
    InteractionScore {
        value,
        signed_value: signed,
        mode,
        terms: Some([ti, tj]),
    }
}

/// `p(x \ ci∪cj) - p(x \ ci) - p(x \ cj) + p(x)` on the context's target
/// class, from four predictions (the base one is already held by `ctx`).
pub fn erasure_interaction(
    ctx: &ScoringContext<'_>,
    ci: &TokenSet,
    cj: &TokenSet,
) -> Result<InteractionScore> {
    if ci.is_empty() || cj.is_empty() || !ci.is_disjoint(cj) {
        return Err(Error::InvalidPair(format!(
            "{:?} and {:?} must be non-empty and disjoint",
            ci.members(),
            cj.members()
        )));
    }
    let (a, b) = canonical(ci, cj);
    let seq = ctx.sequence();
    let strategy = ctx.strategy();
    let seqs = [
        crate::attribution::marginalize(seq, &a.union(b), strategy)?,
        crate::attribution::marginalize(seq, a, strategy)?,
        crate::attribution::marginalize(seq, b, strategy)?,
    ];
    let p = ctx.predictor().predict_many(&seqs)?;
    let t = ctx.target();
    let value = p[0].prob(t) - p[1].prob(t) - p[2].prob(t) + ctx.base_prob();
    Ok(InteractionScore {
        value,
        signed_value: value,
        mode: InteractionMode::Erasure,
        terms: None,
    })
}

/// Deliberate defects for exercising the identity check.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OracleFault {
    #[default]
    None,
    /// Drops the conditioning from the second term, breaking its symmetry
    /// with the first.
    DropConditioning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityReport {
    pub pairs_checked: usize,
    pub max_deviation: f64,
    pub worst_pair: Option<(usize, usize)>,
    pub tolerance: f64,
    pub passed: bool,
}

/// Default cap on sequence length for the exhaustive identity sweep.
pub const IDENTITY_MAX_LEN: usize = 12;

/// Sweeps every pair of distinct maskable singletons and compares the
/// erasure form against the signed leave-one-out form.
///
/// The erasure side is evaluated through a fresh uncached handle on the same
/// classifier, so the two routes share no stored predictions; a model whose
/// outputs drift between calls fails the check.
pub fn verify_erasure_identity(
    predictor: &Predictor,
    seq: &TokenSequence,
    strategy: Strategy,
    tolerance: f64,
) -> Result<IdentityReport> {
    verify_erasure_identity_with(predictor, seq, strategy, tolerance, IDENTITY_MAX_LEN, OracleFault::None)
}

#[doc(hidden)]
pub fn verify_erasure_identity_with(
    predictor: &Predictor,
    seq: &TokenSequence,
    strategy: Strategy,
    tolerance: f64,
    max_len: usize,
    fault: OracleFault,
) -> Result<IdentityReport> {
    let n = seq.maskable_count();
    if n > max_len {
        return Err(Error::Contract(format!(
            "identity sweep limited to {max_len} maskable tokens, got {n}"
        )));
    }
    let fresh = Predictor::uncached(predictor.classifier());
    let loo = ScoringContext::new(predictor, seq, AttributionMethod::Loo, strategy)?;
    let target = loo.target();
    let erasure =
        ScoringContext::with_target(&fresh, seq, AttributionMethod::Loo, strategy, target)?;

    let positions = seq.maskable_positions();
    let mut report = IdentityReport {
        pairs_checked: 0,
        max_deviation: 0.0,
        worst_pair: None,
        tolerance,
        passed: true,
    };
    for (x, &i) in positions.iter().enumerate() {
        for &j in &positions[x + 1..] {
            let (ci, cj) = (TokenSet::singleton(i), TokenSet::singleton(j));
            let signed = match fault {
                OracleFault::None => pair_interaction(&loo, &ci, &cj, InteractionMode::Signed)?,
                OracleFault::DropConditioning => {
                    let ti = loo.cluster_score(&ci)? - loo.conditional_cluster_score(&ci, &cj)?;
                    let tj = loo.cluster_score(&cj)? - loo.cluster_score(&cj)?;
                    from_terms(ti, tj, InteractionMode::Signed)
                }
            };
            let closed = erasure_interaction(&erasure, &ci, &cj)?;
            let dev = (closed.value - signed.signed_value).abs();
            report.pairs_checked += 1;
            if dev > report.max_deviation || dev.is_nan() {
                report.max_deviation = dev;
                report.worst_pair = Some((i, j));
            }
        }
    }
    report.passed = report.max_deviation <= tolerance;
    Ok(report)
}

/// Shorthand for one-off use without a shared context.
pub fn interaction(
    method: &AttributionMethod,
    predictor: &Predictor,
    seq: &TokenSequence,
    ci: &TokenSet,
    cj: &TokenSet,
    strategy: Strategy,
    mode: InteractionMode,
) -> Result<InteractionScore> {
    let ctx = ScoringContext::new(predictor, seq, method.clone(), strategy)?;
    pair_interaction(&ctx, ci, cj, mode)
}
