use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Placeholder substituted for marginalized tokens.
pub const PAD_TOKEN: &str = "[PAD]";

/// Tokens that never take part in clustering when no explicit mask is given.
pub const SPECIAL_TOKENS: [&str; 5] = ["[CLS]", "[SEP]", "[PAD]", "[MASK]", "[UNK]"];

const UNIT_SEP: char = '\u{1F}';
const RECORD_SEP: char = '\u{1E}';

/// A pre-tokenized classifier input, optionally split into two segments
/// (premise / hypothesis).
///
/// Sequences built through [`TokenSequence::new`] are non-empty, have
/// non-decreasing segment ids in `{0, 1}` and at least one maskable token.
/// Marginalized variants produced by the attribution code may break the last
/// two rules (deleting every word leaves only specials, or nothing at all).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawSequence")]
pub struct TokenSequence {
    tokens: Vec<String>,
    segment_ids: Vec<u8>,
    maskable: Vec<bool>,
}

#[derive(Deserialize)]
struct RawSequence {
    tokens: Vec<String>,
    #[serde(default)]
    segment_ids: Option<Vec<u8>>,
    #[serde(default)]
    maskable: Option<Vec<bool>>,
}

impl TryFrom<RawSequence> for TokenSequence {
    type Error = Error;

    fn try_from(raw: RawSequence) -> Result<Self> {
        let n = raw.tokens.len();
        let segment_ids = raw.segment_ids.unwrap_or_else(|| vec![0; n]);
        let maskable = raw
            .maskable
            .unwrap_or_else(|| raw.tokens.iter().map(|t| !is_special(t)).collect());
        TokenSequence::new(raw.tokens, segment_ids, maskable)
    }
}

pub fn is_special(token: &str) -> bool {
    SPECIAL_TOKENS.contains(&token)
}

impl TokenSequence {
    pub fn new(tokens: Vec<String>, segment_ids: Vec<u8>, maskable: Vec<bool>) -> Result<Self> {
        let n = tokens.len();
        if n == 0 {
            return Err(Error::InvalidSequence("sequence is empty".into()));
        }
        if segment_ids.len() != n || maskable.len() != n {
            return Err(Error::InvalidSequence(format!(
                "{n} tokens but {} segment ids and {} mask flags",
                segment_ids.len(),
                maskable.len()
            )));
        }
        if let Some(&bad) = segment_ids.iter().find(|&&s| s > 1) {
            return Err(Error::InvalidSequence(format!("segment id {bad} is not 0 or 1")));
        }
        if segment_ids.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidSequence("segment ids must be non-decreasing".into()));
        }
        if !maskable.iter().any(|&m| m) {
            return Err(Error::InvalidSequence("no maskable token".into()));
        }
        if let Some(t) = tokens.iter().find(|t| t.contains([UNIT_SEP, RECORD_SEP])) {
            return Err(Error::InvalidSequence(format!(
                "token {t:?} contains a reserved separator character"
            )));
        }
        Ok(Self {
            tokens,
            segment_ids,
            maskable,
        })
    }

    /// Single-segment sequence; special tokens are marked non-maskable.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let tokens: Vec<String> = tokens.iter().map(|t| t.as_ref().to_owned()).collect();
        let maskable = tokens.iter().map(|t| !is_special(t)).collect();
        let n = tokens.len();
        Self::new(tokens, vec![0; n], maskable)
    }

    /// Splits on whitespace. The only tokenization the engine performs.
    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<&str> = text.split_whitespace().collect();
        Self::from_tokens(&tokens)
    }

    /// Two-segment NLI input: `[CLS] premise [SEP] hypothesis [SEP]`.
    pub fn pair<S: AsRef<str>>(premise: &[S], hypothesis: &[S]) -> Result<Self> {
        let mut tokens = vec!["[CLS]".to_owned()];
        let mut segment_ids = vec![0u8];
        let mut maskable = vec![false];
        for t in premise {
            tokens.push(t.as_ref().to_owned());
            segment_ids.push(0);
            maskable.push(true);
        }
        tokens.push("[SEP]".to_owned());
        segment_ids.push(0);
        maskable.push(false);
        for t in hypothesis {
            tokens.push(t.as_ref().to_owned());
            segment_ids.push(1);
            maskable.push(true);
        }
        tokens.push("[SEP]".to_owned());
        segment_ids.push(1);
        maskable.push(false);
        Self::new(tokens, segment_ids, maskable)
    }

    /// Builds a sequence without validation, for marginalized variants.
    pub(crate) fn from_parts_unchecked(
        tokens: Vec<String>,
        segment_ids: Vec<u8>,
        maskable: Vec<bool>,
    ) -> Self {
        debug_assert!(tokens.len() == segment_ids.len() && tokens.len() == maskable.len());
        Self {
            tokens,
            segment_ids,
            maskable,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn segment_ids(&self) -> &[u8] {
        &self.segment_ids
    }

    pub fn maskable(&self) -> &[bool] {
        &self.maskable
    }

    pub fn is_maskable(&self, index: usize) -> bool {
        self.maskable.get(index).copied().unwrap_or(false)
    }

    /// Positions of maskable tokens, ascending.
    pub fn maskable_positions(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.maskable[i]).collect()
    }

    pub fn maskable_count(&self) -> usize {
        self.maskable.iter().filter(|&&m| m).count()
    }

    /// Cache key: tokens joined by U+001F, then U+001E, then segment ids.
    ///
    /// Tokens cannot contain either separator, so distinct sequences never
    /// share a key. The mask flags are not part of the key because the model
    /// never sees them.
    pub fn canonical_key(&self) -> String {
        let cap = self.tokens.iter().map(|t| t.len() + 1).sum::<usize>() + self.len() + 1;
        let mut key = String::with_capacity(cap);
        for (i, t) in self.tokens.iter().enumerate() {
            if i > 0 {
                key.push(UNIT_SEP);
            }
            key.push_str(t);
        }
        key.push(RECORD_SEP);
        for &s in &self.segment_ids {
            key.push(char::from(b'0' + s));
        }
        key
    }
}
