//! Greedy agglomerative construction of word-cluster hierarchies.
//!
//! Every maskable token starts as its own cluster. Each step merges the
//! live pair with the largest interaction score; clusters do not have to be
//! contiguous. Two ablations share the same loop: `Connecting` only
//! considers pairs of index-adjacent clusters, `Random` picks a pair
//! uniformly from a seeded generator without scoring anything.
//!
//! Pair scores are memoized by unordered cluster-id pair. Ids are never
//! reused, so after a merge only the pairs involving the new cluster are
//! scored.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attribution::{AttributionMethod, ScoringContext, Strategy, TokenSet};
use crate::error::{Error, Result};
use crate::interaction::{pair_interaction, InteractionMode, InteractionScore};
use crate::par;
use crate::predictor::{Classifier, Predictor, TokenSequence};
use crate::rng;

/// Version of the hierarchy interchange document.
pub const FORMAT_VERSION: u32 = 1;

pub type ClusterId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: ClusterId,
    pub members: TokenSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeStep {
    /// 1-based.
    pub step: usize,
    pub left: ClusterId,
    pub right: ClusterId,
    pub merged: ClusterId,
    pub members: TokenSet,
    /// Absent in random mode, where nothing is scored.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub interaction: Option<InteractionScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum HierarchyMode {
    /// Any two live clusters may merge.
    #[default]
    Unrestricted,
    /// Only index-adjacent clusters may merge; every cluster is a span.
    Connecting,
    /// A uniformly random pair merges at each step.
    Random,
    /// No merges: singletons only.
    Flat,
}

impl fmt::Display for HierarchyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HierarchyMode::Unrestricted => "unrestricted",
            HierarchyMode::Connecting => "connecting",
            HierarchyMode::Random => "random",
            HierarchyMode::Flat => "flat",
        })
    }
}

impl std::str::FromStr for HierarchyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "unrestricted" => Ok(Self::Unrestricted),
            "connecting" => Ok(Self::Connecting),
            "random" => Ok(Self::Random),
            "flat" => Ok(Self::Flat),
            other => Err(Error::Contract(format!("unknown hierarchy mode {other:?}"))),
        }
    }
}

/// Which pair scores are (re)computed at each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PairSchedule {
    /// Keep scores across steps; score only pairs with the new cluster.
    #[default]
    Incremental,
    /// Rescore every candidate pair at every step. Reference behaviour.
    Exhaustive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuildConfig {
    pub method: AttributionMethod,
    pub mode: HierarchyMode,
    pub strategy: Strategy,
    pub interaction: InteractionMode,
    pub seed: u64,
    #[serde(default)]
    pub schedule: PairSchedule,
}

impl BuildConfig {
    pub fn new(method: AttributionMethod, mode: HierarchyMode) -> Self {
        Self {
            method,
            mode,
            strategy: Strategy::Pad,
            interaction: InteractionMode::Absolute,
            seed: 0,
            schedule: PairSchedule::Incremental,
        }
    }

    pub fn loo(mode: HierarchyMode) -> Self {
        Self::new(AttributionMethod::Loo, mode)
    }

    pub fn with_strategy(mut self, strategy: Strategy) -> Self {
        self.strategy = strategy;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_interaction(mut self, mode: InteractionMode) -> Self {
        self.interaction = mode;
        self
    }

    pub fn with_schedule(mut self, schedule: PairSchedule) -> Self {
        self.schedule = schedule;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringProvenance {
    pub method: AttributionMethod,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub model: String,
    pub build: BuildConfig,
    /// Class every score refers to (the original prediction).
    pub target: usize,
    pub base_probs: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scoring: Option<ScoringProvenance>,
}

/// A hierarchy over the maskable tokens of one input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hierarchy {
    pub version: u32,
    pub sequence: TokenSequence,
    pub mode: HierarchyMode,
    pub leaves: Vec<Cluster>,
    pub steps: Vec<MergeStep>,
    /// Attribution per cluster id; empty until scored.
    #[serde(default)]
    pub scores: BTreeMap<ClusterId, f64>,
    pub provenance: Provenance,
}

impl Hierarchy {
    /// Leaves followed by merged clusters in creation order.
    pub fn clusters(&self) -> Vec<Cluster> {
        self.leaves
            .iter()
            .cloned()
            .chain(self.steps.iter().map(|s| Cluster {
                id: s.merged,
                members: s.members.clone(),
            }))
            .collect()
    }

    pub fn members(&self, id: ClusterId) -> Option<&TokenSet> {
        if id < self.leaves.len() {
            return self.leaves.get(id).map(|c| &c.members);
        }
        self.steps
            .get(id - self.leaves.len())
            .filter(|s| s.merged == id)
            .map(|s| &s.members)
    }

    pub fn cluster_count(&self) -> usize {
        self.leaves.len() + self.steps.len()
    }

    pub fn is_scored(&self) -> bool {
        self.scores.len() == self.cluster_count()
    }

    pub fn score(&self, id: ClusterId) -> Option<f64> {
        self.scores.get(&id).copied()
    }

    /// Live clusters after `step` merges (0 = the leaves), sorted by first
    /// member.
    pub fn live_after(&self, step: usize) -> Vec<Cluster> {
        let mut live: BTreeMap<ClusterId, TokenSet> = self
            .leaves
            .iter()
            .map(|c| (c.id, c.members.clone()))
            .collect();
        for s in self.steps.iter().take(step) {
            live.remove(&s.left);
            live.remove(&s.right);
            live.insert(s.merged, s.members.clone());
        }
        let mut out: Vec<Cluster> = live
            .into_iter()
            .map(|(id, members)| Cluster { id, members })
            .collect();
        out.sort_by_key(|c| c.members.first());
        out
    }

    /// Checks the structural invariants: leaf layout, step count, the
    /// partition property after every step, and contiguity for connecting
    /// hierarchies.
    pub fn check_invariants(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Contract(m));
        let maskable = self.sequence.maskable_positions();
        let m = maskable.len();
        if self.version != FORMAT_VERSION {
            return fail(format!("unsupported hierarchy version {}", self.version));
        }
        if self.leaves.len() != m {
            return fail(format!("{} leaves for {m} maskable tokens", self.leaves.len()));
        }
        for (k, (leaf, &pos)) in self.leaves.iter().zip(&maskable).enumerate() {
            if leaf.id != k || leaf.members.members() != [pos] {
                return fail(format!("leaf {k} is {leaf:?}, expected {{{pos}}}"));
            }
        }
        let expected = if self.mode == HierarchyMode::Flat { 0 } else { m - 1 };
        if self.steps.len() != expected {
            return fail(format!("{} steps, expected {expected}", self.steps.len()));
        }
        let rank: HashMap<usize, usize> = maskable.iter().enumerate().map(|(r, &p)| (p, r)).collect();
        let mut live: BTreeMap<ClusterId, TokenSet> =
            self.leaves.iter().map(|c| (c.id, c.members.clone())).collect();
        for (k, s) in self.steps.iter().enumerate() {
            if s.step != k + 1 || s.merged != m + k {
                return fail(format!("step {k} is numbered {} creating id {}", s.step, s.merged));
            }
            if s.left == s.right {
                return fail(format!("step {} merges cluster {} with itself", s.step, s.left));
            }
            let (Some(l), Some(r)) = (live.remove(&s.left), live.remove(&s.right)) else {
                return fail(format!("step {} merges a cluster that is not live", s.step));
            };
            if !l.is_disjoint(&r) || l.union(&r) != s.members {
                return fail(format!("step {} does not merge disjoint clusters into their union", s.step));
            }
            if self.mode == HierarchyMode::Connecting {
                let lo = rank[&s.members.first().unwrap()];
                let hi = rank[&s.members.last().unwrap()];
                if hi - lo + 1 != s.members.len() {
                    return fail(format!("step {} creates a non-contiguous span", s.step));
                }
            }
            live.insert(s.merged, s.members.clone());
            let covered: usize = live.values().map(TokenSet::len).sum();
            let union: TokenSet = live.values().flat_map(|c| c.iter()).collect();
            if covered != m || union.members() != maskable.as_slice() {
                return fail(format!("live clusters after step {} do not partition the tokens", s.step));
            }
        }
        if let Some((&id, _)) = self.scores.iter().find(|(&id, _)| id >= self.cluster_count()) {
            return fail(format!("score for unknown cluster {id}"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let h: Hierarchy = serde_json::from_str(text)?;
        h.check_invariants()?;
        Ok(h)
    }
}

struct Live {
    id: ClusterId,
    members: TokenSet,
}

/// Ordering key of a pair for tie-breaking: first and last token of the
/// union, then the member lists of the two clusters (earlier cluster first).
fn pair_key<'a>(a: &'a TokenSet, b: &'a TokenSet) -> (usize, usize, &'a TokenSet, &'a TokenSet) {
    let (x, y) = if a.first() <= b.first() { (a, b) } else { (b, a) };
    (x.first().unwrap(), x.last().unwrap().max(y.last().unwrap()), x, y)
}

/// Whether candidate `a` beats `b`: larger value, then smaller pair key.
pub(crate) fn outranks(a: (f64, &TokenSet, &TokenSet), b: (f64, &TokenSet, &TokenSet)) -> bool {
    let va = if a.0.is_nan() { f64::NEG_INFINITY } else { a.0 };
    let vb = if b.0.is_nan() { f64::NEG_INFINITY } else { b.0 };
    match va.total_cmp(&vb) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => pair_key(a.1, a.2) < pair_key(b.1, b.2),
    }
}

fn memo_key(a: ClusterId, b: ClusterId) -> (ClusterId, ClusterId) {
    (a.min(b), a.max(b))
}

/// Builds a hierarchy with its own scoring context.
pub fn build_hierarchy(predictor: &Predictor, seq: &TokenSequence, config: &BuildConfig) -> Result<Hierarchy> {
    let ctx = ScoringContext::new(predictor, seq, config.method.clone(), config.strategy)?;
    build_with_context(&ctx, config)
}

/// Builds a hierarchy, sharing `ctx` (and its memoized fits) with the caller.
pub fn build_with_context(ctx: &ScoringContext<'_>, config: &BuildConfig) -> Result<Hierarchy> {
    let seq = ctx.sequence();
    let positions = seq.maskable_positions();
    let m = positions.len();
    if m < 2 && config.mode != HierarchyMode::Flat {
        return Err(Error::DegenerateInput(format!(
            "need at least 2 maskable tokens to build a hierarchy, got {m}"
        )));
    }
    if ctx.method() != &config.method || ctx.strategy() != config.strategy {
        return Err(Error::Contract("scoring context does not match the build config".into()));
    }

    let leaves: Vec<Cluster> = positions
        .iter()
        .enumerate()
        .map(|(id, &p)| Cluster {
            id,
            members: TokenSet::singleton(p),
        })
        .collect();
    let mut live: Vec<Live> = leaves
        .iter()
        .map(|c| Live {
            id: c.id,
            members: c.members.clone(),
        })
        .collect();
    let mut steps = Vec::with_capacity(m.saturating_sub(1));
    let mut memo: HashMap<(ClusterId, ClusterId), InteractionScore> = HashMap::new();
    let mut rng = rng::substream(config.seed, "random-mode", 0);
    let mut next_id = m;

    while live.len() > 1 && config.mode != HierarchyMode::Flat {
        // `live` stays sorted by first member, so for contiguous clusters
        // neighbours in this order are exactly the adjacent spans.
        let candidates: Vec<(usize, usize)> = match config.mode {
            HierarchyMode::Connecting => (0..live.len() - 1).map(|a| (a, a + 1)).collect(),
            _ => (0..live.len())
                .flat_map(|a| (a + 1..live.len()).map(move |b| (a, b)))
                .collect(),
        };

        let (a, b, interaction) = if config.mode == HierarchyMode::Random {
            let (a, b) = candidates[rng.gen_range(0..candidates.len())];
            (a, b, None)
        } else {
            if config.schedule == PairSchedule::Exhaustive {
                memo.clear();
            }
            let missing: Vec<(usize, usize)> = candidates
                .iter()
                .copied()
                .filter(|&(a, b)| !memo.contains_key(&memo_key(live[a].id, live[b].id)))
                .collect();
            let scored = par::try_map(&missing, |&(a, b)| {
                pair_interaction(ctx, &live[a].members, &live[b].members, config.interaction)
            })?;
            for (&(a, b), s) in missing.iter().zip(scored) {
                memo.insert(memo_key(live[a].id, live[b].id), s);
            }
            let mut best = candidates[0];
            for &(a, b) in &candidates[1..] {
                let sa = memo[&memo_key(live[a].id, live[b].id)].value;
                let sb = memo[&memo_key(live[best.0].id, live[best.1].id)].value;
                if outranks(
                    (sa, &live[a].members, &live[b].members),
                    (sb, &live[best.0].members, &live[best.1].members),
                ) {
                    best = (a, b);
                }
            }
            let score = memo[&memo_key(live[best.0].id, live[best.1].id)];
            (best.0, best.1, Some(score))
        };

        let right = live.remove(b);
        let left = live.remove(a);
        let members = left.members.union(&right.members);
        let merged = next_id;
        next_id += 1;
        memo.retain(|&(x, y), _| x != left.id && x != right.id && y != left.id && y != right.id);
        steps.push(MergeStep {
            step: steps.len() + 1,
            left: left.id,
            right: right.id,
            merged,
            members: members.clone(),
            interaction,
        });
        let at = live.partition_point(|c| c.members.first() < members.first());
        live.insert(at, Live { id: merged, members });
    }

    let hierarchy = Hierarchy {
        version: FORMAT_VERSION,
        sequence: seq.clone(),
        mode: config.mode,
        leaves,
        steps,
        scores: BTreeMap::new(),
        provenance: Provenance {
            model: ctx.predictor().describe(),
            build: config.clone(),
            target: ctx.target(),
            base_probs: ctx.base_prediction().probs.clone(),
            scoring: None,
        },
    };
    if cfg!(debug_assertions) {
        hierarchy.check_invariants()?;
    }
    Ok(hierarchy)
}

/// Fills in the attribution of every cluster, evaluated on the full input
/// against the hierarchy's target class. Rescoring replaces old scores.
pub fn score_hierarchy(
    predictor: &Predictor,
    hierarchy: &mut Hierarchy,
    method: &AttributionMethod,
    strategy: Strategy,
) -> Result<()> {
    let seq = hierarchy.sequence.clone();
    let ctx = ScoringContext::with_target(
        predictor,
        &seq,
        method.clone(),
        strategy,
        hierarchy.provenance.target,
    )?;
    score_with_context(&ctx, hierarchy)
}

pub fn score_with_context(ctx: &ScoringContext<'_>, hierarchy: &mut Hierarchy) -> Result<()> {
    if ctx.sequence() != &hierarchy.sequence || ctx.target() != hierarchy.provenance.target {
        return Err(Error::Contract("scoring context does not match the hierarchy".into()));
    }
    let clusters = hierarchy.clusters();
    let scores = par::try_map(&clusters, |c| ctx.cluster_score(&c.members))?;
    hierarchy.scores = clusters.iter().map(|c| c.id).zip(scores).collect();
    hierarchy.provenance.scoring = Some(ScoringProvenance {
        method: ctx.method().clone(),
        strategy: ctx.strategy(),
    });
    Ok(())
}

/// Builds and scores with one shared context.
pub fn explain(predictor: &Predictor, seq: &TokenSequence, config: &BuildConfig) -> Result<Hierarchy> {
    let ctx = ScoringContext::new(predictor, seq, config.method.clone(), config.strategy)?;
    let mut h = build_with_context(&ctx, config)?;
    score_with_context(&ctx, &mut h)?;
    Ok(h)
}

/// Measured and analytic model-evaluation counts for one unrestricted
/// leave-one-out build.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassCount {
    pub n: usize,
    pub memoized: bool,
    pub measured: u64,
    pub predicted: u64,
}

/// Pair evaluations of an incremental build over `n` leaves: every initial
/// pair, then one pair per (new cluster, other live cluster).
pub fn pairs_scored(n: usize) -> u64 {
    let c2 = |k: usize| (k * k.saturating_sub(1) / 2) as u64;
    c2(n) + c2(n.saturating_sub(1))
}

/// `3n² + 8n`: allowance for a build without stored predictions.
pub fn pass_budget(n: usize) -> u64 {
    let n = n as u64;
    3 * n * n + 8 * n
}

/// Counts forward passes of an unrestricted leave-one-out build.
///
/// Without memoization every pair costs three fresh evaluations on top of
/// the single base prediction. With memoization predictions are recorded
/// across steps, so a pair involving a new cluster only needs the
/// prediction with both clusters removed. `predicted` is exact when every
/// erasure gives a distinct sequence; repeated words can only lower the
/// measured count.
pub fn count_forward_passes(
    classifier: std::sync::Arc<dyn Classifier>,
    seq: &TokenSequence,
    strategy: Strategy,
    memoize: bool,
) -> Result<PassCount> {
    let predictor = if memoize {
        Predictor::new(classifier)
    } else {
        Predictor::uncached(classifier)
    };
    let n = seq.maskable_count();
    let config = BuildConfig::loo(HierarchyMode::Unrestricted).with_strategy(strategy);
    build_hierarchy(&predictor, seq, &config)?;
    let predicted = if memoize {
        1 + n as u64 + pairs_scored(n)
    } else {
        1 + 3 * pairs_scored(n)
    };
    Ok(PassCount {
        n,
        memoized: memoize,
        measured: predictor.stats().forward_passes,
        predicted,
    })
}
