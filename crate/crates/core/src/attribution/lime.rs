//! Local linear surrogates.
//!
//! Perturbations mask each maskable token independently; the surrogate is a
//! weighted ridge regression of the target-class probability on binary
//! presence indicators, with an unpenalized intercept.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{marginalize_unchecked, Strategy, TokenSet};
use crate::error::{Error, Result};
use crate::predictor::{Predictor, TokenSequence};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimeConfig {
    pub num_samples: usize,
    pub mask_probability: f64,
    /// Width of the exponential kernel over the masked fraction.
    pub kernel_width: f64,
    pub ridge_penalty: f64,
    pub seed: u64,
}

impl LimeConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            num_samples: 1000,
            mask_probability: 0.5,
            kernel_width: 0.25,
            ridge_penalty: 1.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Contract(format!("invalid LIME config: {m}")));
        if self.num_samples < 10 {
            return bad(format!("num_samples {} < 10", self.num_samples));
        }
        if !(self.mask_probability > 0.0 && self.mask_probability < 1.0) {
            return bad(format!("mask_probability {} not in (0, 1)", self.mask_probability));
        }
        if !(self.kernel_width.is_finite() && self.kernel_width > 0.0) {
            return bad(format!("kernel_width {} must be positive", self.kernel_width));
        }
        if !(self.ridge_penalty.is_finite() && self.ridge_penalty >= 0.0) {
            return bad(format!("ridge_penalty {} must be non-negative", self.ridge_penalty));
        }
        Ok(())
    }
}

struct Design {
    /// Presence indicators, one row per sample, one column per free token.
    presence: Vec<Vec<bool>>,
    sequences: Vec<TokenSequence>,
    kernel: Vec<f64>,
}

fn draw_design(
    seq: &TokenSequence,
    free: &[usize],
    frozen: &TokenSet,
    config: &LimeConfig,
    strategy: Strategy,
    attempt: u64,
) -> Design {
    let maskable = seq.maskable_positions();
    let mut rng = rng::substream(config.seed, "lime", attempt);
    let mut presence = Vec::with_capacity(config.num_samples);
    let mut sequences = Vec::with_capacity(config.num_samples);
    let mut kernel = Vec::with_capacity(config.num_samples);
    for s in 0..config.num_samples {
        // A draw is taken for every maskable token, frozen or not, so fits
        // with different frozen sets see the same masks on shared tokens.
        let masked: Vec<bool> = maskable
            .iter()
            .map(|_| s > 0 && rng.gen::<f64>() < config.mask_probability)
            .collect();
        let removed: TokenSet = maskable
            .iter()
            .zip(&masked)
            .filter(|(p, m)| **m || frozen.contains(**p))
            .map(|(p, _)| *p)
            .collect();
        let row: Vec<bool> = free.iter().map(|p| !removed.contains(*p)).collect();
        let d = row.iter().filter(|x| !**x).count() as f64 / free.len() as f64;
        kernel.push((-(d * d) / (config.kernel_width * config.kernel_width)).exp());
        sequences.push(marginalize_unchecked(seq, &removed, strategy));
        presence.push(row);
    }
    Design {
        presence,
        sequences,
        kernel,
    }
}

fn is_degenerate(presence: &[Vec<bool>]) -> bool {
    presence.windows(2).all(|w| w[0] == w[1])
}

fn weighted_ridge(x: &[Vec<bool>], y: &[f64], w: &[f64], lambda: f64) -> Result<Vec<f64>> {
    let n = x.len();
    let d = x[0].len();
    let wsum: f64 = w.iter().sum();
    let mut xbar = vec![0.0; d];
    let mut ybar = 0.0;
    for r in 0..n {
        ybar += w[r] * y[r];
        for (c, m) in xbar.iter_mut().enumerate() {
            if x[r][c] {
                *m += w[r];
            }
        }
    }
    ybar /= wsum;
    for m in &mut xbar {
        *m /= wsum;
    }

    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    let mut xc = vec![0.0; d];
    for r in 0..n {
        for c in 0..d {
            xc[c] = f64::from(u8::from(x[r][c])) - xbar[c];
        }
        let yc = y[r] - ybar;
        for a in 0..d {
            let wa = w[r] * xc[a];
            rhs[a] += wa * yc;
            for b in a..d {
                gram[(a, b)] += wa * xc[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            gram[(a, b)] = gram[(b, a)];
        }
        gram[(a, a)] += lambda;
    }
    let chol = gram.cholesky().ok_or_else(|| {
        Error::Numerical("LIME normal equations are singular; raise ridge_penalty".into())
    })?;
    Ok(chol.solve(&rhs).iter().copied().collect())
}

/// Fits the surrogate and returns one weight per position of `seq`.
///
/// Positions that are non-maskable or in `frozen` get weight zero; frozen
/// positions stay marginalized in every sample. Deterministic for a fixed
/// `config.seed`.
pub fn lime_weights(
    predictor: &Predictor,
    seq: &TokenSequence,
    target: usize,
    config: &LimeConfig,
    strategy: Strategy,
    frozen: &TokenSet,
) -> Result<Vec<f64>> {
    config.validate()?;
    let free: Vec<usize> = seq
        .maskable_positions()
        .into_iter()
        .filter(|p| !frozen.contains(*p))
        .collect();
    if free.is_empty() {
        return Err(Error::DegenerateInput("no token left to perturb".into()));
    }

    let mut design = draw_design(seq, &free, frozen, config, strategy, 0);
    if is_degenerate(&design.presence) {
        log::debug!("identical LIME samples, drawing a second design");
        design = draw_design(seq, &free, frozen, config, strategy, 1);
        if is_degenerate(&design.presence) {
            return Err(Error::Numerical(
                "every LIME sample is identical; the design matrix is degenerate".into(),
            ));
        }
    }

    let y: Vec<f64> = predictor
        .predict_many(&design.sequences)?
        .iter()
        .map(|p| p.prob(target))
        .collect();
    let coef = weighted_ridge(&design.presence, &y, &design.kernel, config.ridge_penalty)?;

    let mut out = vec![0.0; seq.len()];
    for (p, c) in free.iter().zip(coef) {
        out[*p] = c;
    }
    Ok(out)
}
