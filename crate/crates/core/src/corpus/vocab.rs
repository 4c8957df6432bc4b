//! Word-level vocabulary and fixed-length tokenization.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::Sample;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const CLS: u32 = 2;
const RESERVED: [&str; 3] = ["[PAD]", "[UNK]", "[CLS]"];

pub const DEFAULT_MAX_VOCAB: usize = 2048;

/// Token ↔ id mapping. Ids are contiguous; 0..3 are PAD, UNK and CLS.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    /// Tokens in id order, reserved entries included.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() || tokens[..3].iter().ne(RESERVED.iter()) {
            return Err(Error::Data(
                "vocabulary must start with [PAD], [UNK], [CLS]".into(),
            ));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Data(format!("duplicate vocabulary token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

/// Lowercases and splits on runs of non-alphanumeric characters.
pub fn words(caption: &str) -> impl Iterator<Item = String> + '_ {
    caption
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
}

/// Keeps the `max_size - 3` most frequent words; ties go to the
/// lexicographically smaller word, and ids follow that same order.
pub fn build_vocab(samples: &[Sample], max_size: usize) -> Result<Vocab> {
    if max_size < RESERVED.len() {
        return Err(Error::Config(format!(
            "vocabulary size {max_size} leaves no room for reserved tokens"
        )));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for s in samples {
        for w in words(&s.caption) {
            *counts.entry(w).or_default() += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|(wa, ca), (wb, cb)| cb.cmp(ca).then_with(|| wa.cmp(wb)));
    ranked.truncate(max_size - RESERVED.len());

    let tokens: Vec<String> = RESERVED
        .iter()
        .map(|s| s.to_string())
        .chain(ranked.into_iter().map(|(w, _)| w))
        .collect();
    Vocab::try_from(tokens)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    pub ids: Vec<u32>,
    /// 1 for real tokens (CLS and UNK included), 0 for padding.
    pub mask: Vec<u8>,
}

impl TokenSeq {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn real_tokens(&self) -> impl Iterator<Item = u32> + '_ {
        self.ids
            .iter()
            .zip(&self.mask)
            .filter(|(_, &m)| m == 1)
            .map(|(&id, _)| id)
    }
}

/// `[CLS]` followed by word ids (UNK when unknown), truncated or PAD-filled
/// to exactly `len` positions.
pub fn tokenize(caption: &str, vocab: &Vocab, len: usize) -> TokenSeq {
    let ids: Vec<u32> = std::iter::once(CLS)
        .chain(words(caption).map(|w| vocab.id(&w).unwrap_or(UNK)))
        .take(len)
        .collect();
    let real = ids.len();
    let mut mask = vec![1u8; real];
    let mut ids = ids;
    ids.resize(len, PAD);
    mask.resize(len, 0);
    TokenSeq { ids, mask }
}
