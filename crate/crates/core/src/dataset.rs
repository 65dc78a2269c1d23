//! JSON-lines datasets.
//!
//! One object per line: `{"tokens": [...], "segment_ids": [...], "label": 0}`.
//! `segment_ids` defaults to all zeros, `label` is optional, and an optional
//! `maskable` array overrides the default (every non-special token).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::predictor::{is_special, TokenSequence};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub sequence: TokenSequence,
    pub label: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    tokens: Vec<String>,
    #[serde(default)]
    segment_ids: Option<Vec<u8>>,
    #[serde(default)]
    maskable: Option<Vec<bool>>,
    #[serde(default)]
    label: Option<usize>,
}

#[derive(Serialize)]
struct LineOut<'a> {
    tokens: &'a [String],
    segment_ids: &'a [u8],
    #[serde(skip_serializing_if = "Option::is_none")]
    maskable: Option<&'a [bool]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
}

/// Parses a JSON-lines document. Blank lines are ignored; samples without a
/// maskable token are skipped with a warning. Line numbers in errors are
/// 1-based.
pub fn parse_jsonl(text: &str) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Dataset { line, message };
        let parsed: Line = serde_json::from_str(raw).map_err(|e| err(e.to_string()))?;
        let n = parsed.tokens.len();
        let maskable = parsed
            .maskable
            .unwrap_or_else(|| parsed.tokens.iter().map(|t| !is_special(t)).collect());
        if n > 0 && maskable.len() == n && !maskable.iter().any(|&m| m) {
            log::warn!("dataset line {line}: no maskable token, sample skipped");
            continue;
        }
        let segment_ids = parsed.segment_ids.unwrap_or_else(|| vec![0; n]);
        let sequence = TokenSequence::new(parsed.tokens, segment_ids, maskable).map_err(|e| err(e.to_string()))?;
        out.push(Sample {
            sequence,
            label: parsed.label,
        });
    }
    Ok(out)
}

pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    parse_jsonl(&std::fs::read_to_string(path)?)
}

/// Serializes samples in the format [`parse_jsonl`] reads.
pub fn to_jsonl(samples: &[Sample]) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        let seq = &s.sequence;
        let default = seq.tokens().iter().zip(seq.maskable()).all(|(t, &m)| m != is_special(t));
        out.push_str(&serde_json::to_string(&LineOut {
            tokens: seq.tokens(),
            segment_ids: seq.segment_ids(),
            maskable: (!default).then(|| seq.maskable()),
            label: s.label,
        })?);
        out.push('\n');
    }
    Ok(out)
}

/// `(sequence, label)` pairs for training; every sample must be labeled.
pub fn labeled(samples: &[Sample]) -> Result<Vec<(TokenSequence, usize)>> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.label.map(|y| (s.sequence.clone(), y)).ok_or_else(|| Error::Dataset {
                line: i + 1,
                message: "sample has no label".into(),
            })
        })
        .collect()
}
