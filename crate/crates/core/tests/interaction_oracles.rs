mod common;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};

use hiex_core::attribution::{AttributionMethod, ScoringContext, Strategy, TokenSet};
use hiex_core::hierarchy::{explain, BuildConfig, HierarchyMode};
use hiex_core::interaction::{
    erasure_interaction, interaction, pair_interaction, verify_erasure_identity, verify_erasure_identity_with,
    InteractionMode, OracleFault, IDENTITY_MAX_LEN,
};
use hiex_core::predictor::{BagOfWordsModel, ConstantClassifier, FnClassifier, Predictor, TokenSequence};
use proptest::prelude::*;

use common::*;

/// Logistic model with an explicit `vivid × witty` feature; unary weights
/// are small and the bias keeps the pair near the decision boundary.
fn product_model() -> BagOfWordsModel {
    BagOfWordsModel::new(2)
        .unwrap()
        .with_bias(vec![0.0, -1.2])
        .unwrap()
        .with_weight("vivid", vec![0.0, 0.2])
        .unwrap()
        .with_weight("witty", vec![0.0, 0.2])
        .unwrap()
        .with_weight("good", vec![0.0, 0.3])
        .unwrap()
        .with_weight("dull", vec![0.3, 0.0])
        .unwrap()
        .with_product("vivid", "witty", vec![0.0, 2.0])
        .unwrap()
}

#[test]
fn planted_pair_has_the_largest_interaction() {
    let model = product_model();
    let fillers = ["good", "dull", "plot", "film"];
    for n in 2..=6 {
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                let tokens: Vec<&str> = (0..n)
                    .map(|i| match i {
                        _ if i == a => "vivid",
                        _ if i == b => "witty",
                        _ => fillers[i % fillers.len()],
                    })
                    .collect();
                let seq = TokenSequence::from_tokens(&tokens).unwrap();
                let p = Predictor::new(Arc::new(model.clone()));
                let ctx = ScoringContext::new(&p, &seq, AttributionMethod::Loo, Strategy::Pad).unwrap();
                let phi = |x: usize, y: usize| {
                    pair_interaction(&ctx, &TokenSet::singleton(x), &TokenSet::singleton(y), InteractionMode::Absolute)
                        .unwrap()
                        .value
                };
                let planted = phi(a, b);
                for c in (0..n).filter(|&c| c != a && c != b) {
                    assert!(planted > phi(a, c), "{tokens:?}: phi(a,b)={planted} phi(a,{c})={}", phi(a, c));
                }
            }
        }
    }
}

#[test]
fn erasure_form_matches_four_direct_calls() {
    let model = product_model();
    let p = Predictor::new(Arc::new(model.clone()));
    let seq = TokenSequence::from_text("vivid good plot witty dull").unwrap();
    let ctx = ScoringContext::new(&p, &seq, AttributionMethod::Loo, Strategy::Pad).unwrap();
    let y = ctx.target();
    let probs = |s: &TokenSequence| model.probs(s);
    let q = |set: &TokenSet| prob_without(&probs, &seq, set, Strategy::Pad, y);
    let (a, b) = (TokenSet::singleton(0), TokenSet::singleton(3));
    let expected = q(&a.union(&b)) - q(&a) - q(&b) + q(&TokenSet::new([]));
    let got = erasure_interaction(&ctx, &a, &b).unwrap().value;
    assert!((got - expected).abs() < 1e-12);
    assert!(got > 0.0);
}

#[test]
fn additive_model_has_no_interactions() {
    let weights = [("good", 0.12), ("great", 0.15), ("dull", -0.1), ("bad", -0.14), ("plot", 0.01)];
    let model: Arc<FnClassifier> = Arc::new(linear_probability_model(&weights));
    let seq = TokenSequence::from_text("good plot bad great dull film").unwrap();
    let p = Predictor::new(model);
    let ctx = ScoringContext::new(&p, &seq, AttributionMethod::Loo, Strategy::Pad).unwrap();
    let pos = seq.maskable_positions();
    for (x, &i) in pos.iter().enumerate() {
        for &j in &pos[x + 1..] {
            for mode in [InteractionMode::Absolute, InteractionMode::Signed, InteractionMode::Erasure] {
                let v = pair_interaction(&ctx, &TokenSet::singleton(i), &TokenSet::singleton(j), mode).unwrap();
                assert!(v.value.abs() <= 1e-9, "{mode} ({i},{j}) = {}", v.value);
            }
        }
    }
    // Cluster scores then add up along the hierarchy.
    let h = explain(&p, &seq, &BuildConfig::loo(HierarchyMode::Unrestricted)).unwrap();
    for s in &h.steps {
        let sum = h.scores[&s.left] + h.scores[&s.right];
        assert!((h.scores[&s.merged] - sum).abs() <= 1e-6);
    }
}

#[test]
fn constant_model_passes_the_identity_with_zero_deviation() {
    let p = Predictor::new(Arc::new(ConstantClassifier::uniform(3)));
    let seq = TokenSequence::from_text("a b c d").unwrap();
    let r = verify_erasure_identity(&p, &seq, Strategy::Pad, 1e-9).unwrap();
    assert!(r.passed);
    assert_eq!(r.max_deviation, 0.0);
    assert_eq!(r.pairs_checked, 6);
}

#[test]
fn identity_detects_impure_models() {
    let calls = Arc::new(AtomicU64::new(0));
    let counter = calls.clone();
    let drifting = FnClassifier::new("drifting", 2, move |s: &TokenSequence| {
        let k = counter.fetch_add(1, Ordering::Relaxed);
        let p = 0.3 + 0.05 * s.len() as f64 + 0.01 * (k % 7) as f64;
        vec![1.0 - p, p]
    });
    let p = Predictor::new(Arc::new(drifting));
    let seq = TokenSequence::from_text("good plot bad film").unwrap();
    let r = verify_erasure_identity(&p, &seq, Strategy::Pad, 1e-9).unwrap();
    assert!(!r.passed);
    assert!(r.worst_pair.is_some());
}

#[test]
fn identity_detects_a_dropped_condition() {
    let p = Predictor::new(Arc::new(product_model()));
    let seq = TokenSequence::from_text("vivid good witty dull").unwrap();
    let ok = verify_erasure_identity_with(&p, &seq, Strategy::Pad, 1e-9, IDENTITY_MAX_LEN, OracleFault::None).unwrap();
    assert!(ok.passed);
    let bad =
        verify_erasure_identity_with(&p, &seq, Strategy::Pad, 1e-9, IDENTITY_MAX_LEN, OracleFault::DropConditioning)
            .unwrap();
    assert!(!bad.passed);
}

fn shared_model() -> &'static BagOfWordsModel {
    static MODEL: OnceLock<BagOfWordsModel> = OnceLock::new();
    MODEL.get_or_init(|| planted_model(8).1)
}

fn words() -> impl proptest::strategy::Strategy<Value = Vec<&'static str>> {
    prop::collection::vec(
        prop::sample::select(vec!["vivid", "witty", "good", "bad", "dull", "the", "plot", "great"]),
        2..9,
    )
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 150, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn erasure_equals_signed_leave_one_out(words in words(), delete in any::<bool>()) {
        let p = Predictor::new(Arc::new(shared_model().clone()));
        let seq = TokenSequence::from_tokens(&words).unwrap();
        let strategy = if delete { Strategy::Delete } else { Strategy::Pad };
        let r = verify_erasure_identity(&p, &seq, strategy, 1e-9).unwrap();
        prop_assert!(r.passed, "deviation {}", r.max_deviation);
    }

    #[test]
    fn symmetric_and_absolute_dominates(words in words(), split in any::<u32>(), lime in any::<bool>()) {
        let p = Predictor::new(Arc::new(shared_model().clone()));
        let seq = TokenSequence::from_tokens(&words).unwrap();
        let n = words.len();
        let a = TokenSet::new((0..n).filter(|i| split & (1 << i) != 0 && (split >> 16) & (1 << i) != 0));
        let b = TokenSet::new((0..n).filter(|i| split & (1 << i) == 0));
        prop_assume!(!a.is_empty() && !b.is_empty());
        let method = if lime {
            AttributionMethod::Lime(hiex_core::attribution::LimeConfig { num_samples: 60, ..hiex_core::attribution::LimeConfig::with_seed(1) })
        } else {
            AttributionMethod::Loo
        };
        for mode in [InteractionMode::Absolute, InteractionMode::Signed, InteractionMode::Erasure] {
            let ab = interaction(&method, &p, &seq, &a, &b, Strategy::Pad, mode).unwrap();
            let ba = interaction(&method, &p, &seq, &b, &a, Strategy::Pad, mode).unwrap();
            prop_assert_eq!(ab.value.to_bits(), ba.value.to_bits());
        }
        let abs = interaction(&method, &p, &seq, &a, &b, Strategy::Pad, InteractionMode::Absolute).unwrap();
        prop_assert!(abs.value >= 0.0);
        prop_assert!(abs.value >= abs.signed_value.abs());
    }
}
