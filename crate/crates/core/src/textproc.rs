// SPDX-License-Identifier: Apache-2.0

//! Text preprocessing shared by both classifier backends.
//!
//! An issue is turned into text with [`concat_title_body`], cleaned with
//! [`normalize_text`] and split on whitespace. The transformer backend maps
//! words through a [`Vocabulary`] into a fixed-length [`TokenSequence`]; the
//! linear backend additionally uses [`hash_ngrams`] for subword features.

use std::collections::HashMap;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::fnv::{fnv1a64, Fnv1a};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const SEP_ID: u32 = 2;
/// Number of ids reserved ahead of learned tokens.
pub const RESERVED_IDS: u32 = 3;

/// Literal placed between title and body.
pub const SEPARATOR: &str = " [SEP] ";
/// The separator as it appears after normalisation.
pub const SEP_TOKEN: &str = "[sep]";

#[derive(Debug, Error)]
pub enum TextError {
    #[error("cannot build a vocabulary from an empty corpus")]
    EmptyCorpus,
    #[error("invalid vocabulary settings: {0}")]
    InvalidSettings(&'static str),
    #[error("vocabulary file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("vocabulary file: duplicate or reserved token {0:?}")]
    BadToken(String),
}

pub fn concat_title_body(title: &str, body: &str) -> String {
    let mut s = String::with_capacity(title.len() + SEPARATOR.len() + body.len());
    s.push_str(title);
    s.push_str(SEPARATOR);
    s.push_str(body);
    s
}

fn code_fence_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?s)```.*?```").unwrap())
}

fn url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"https?://\S+").unwrap())
}

/// NFC, lowercase, fenced code blocks to `codeblock`, URLs to `url`,
/// whitespace collapsed and trimmed.
pub fn normalize_text(s: &str) -> String {
    let lowered: String = s.nfc().collect::<String>().to_lowercase();
    let lowered: String = lowered.nfc().collect();
    let no_code = code_fence_re().replace_all(&lowered, " codeblock ");
    let no_urls = url_re().replace_all(&no_code, " url ");
    no_urls.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Normalised whitespace-separated words.
pub fn words(text: &str) -> Vec<String> {
    normalize_text(text)
        .split(' ')
        .filter(|w| !w.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Word-level vocabulary with three reserved ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    token_to_id: HashMap<String, u32>,
    min_frequency: u32,
    max_size: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VocabularyFile {
    min_frequency: u32,
    max_size: usize,
    tokens: Vec<String>,
}

impl Vocabulary {
    /// Builds a vocabulary from an explicit learned-token list (id = index + 3).
    pub fn from_tokens(tokens: Vec<String>, min_frequency: u32, max_size: usize) -> Result<Self, TextError> {
        let mut token_to_id = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t == SEP_TOKEN || t.is_empty() {
                return Err(TextError::BadToken(t.clone()));
            }
            if token_to_id.insert(t.clone(), i as u32 + RESERVED_IDS).is_some() {
                return Err(TextError::BadToken(t.clone()));
            }
        }
        Ok(Self {
            tokens,
            token_to_id,
            min_frequency,
            max_size,
        })
    }

    /// Learned tokens in id order (id = index + 3).
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn min_frequency(&self) -> u32 {
        self.min_frequency
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    /// Total id space including the reserved ids.
    pub fn len(&self) -> usize {
        self.tokens.len() + RESERVED_IDS as usize
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, word: &str) -> u32 {
        if word == SEP_TOKEN {
            return SEP_ID;
        }
        self.token_to_id.get(word).copied().unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        match id {
            PAD_ID => Some("[pad]"),
            UNK_ID => Some("[unk]"),
            SEP_ID => Some(SEP_TOKEN),
            _ => self.tokens.get((id - RESERVED_IDS) as usize).map(String::as_str),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&VocabularyFile {
            min_frequency: self.min_frequency,
            max_size: self.max_size,
            tokens: self.tokens.clone(),
        })
        .expect("vocabulary serialises")
    }

    pub fn from_json(s: &str) -> Result<Self, TextError> {
        let f: VocabularyFile = serde_json::from_str(s)?;
        Self::from_tokens(f.tokens, f.min_frequency, f.max_size)
    }

    /// FNV-1a of the JSON form, used to tie a model to its vocabulary.
    pub fn fingerprint(&self) -> u64 {
        fnv1a64(self.to_json().as_bytes())
    }
}

/// Counts normalised words over `corpus`, keeps those seen at least
/// `min_frequency` times, most frequent first with lexicographic tie-break,
/// truncated to `max_size`.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], min_frequency: u32, max_size: usize) -> Result<Vocabulary, TextError> {
    if corpus.is_empty() {
        return Err(TextError::EmptyCorpus);
    }
    if min_frequency == 0 {
        return Err(TextError::InvalidSettings("min_frequency must be >= 1"));
    }
    if max_size == 0 {
        return Err(TextError::InvalidSettings("max_size must be >= 1"));
    }
    let mut counts: HashMap<String, u64> = HashMap::new();
    for doc in corpus {
        for w in words(doc.as_ref()) {
            if w != SEP_TOKEN {
                *counts.entry(w).or_insert(0) += 1;
            }
        }
    }
    let mut kept: Vec<(String, u64)> = counts
        .into_iter()
        .filter(|(_, c)| *c >= u64::from(min_frequency))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    kept.truncate(max_size);
    Vocabulary::from_tokens(kept.into_iter().map(|(t, _)| t).collect(), min_frequency, max_size)
}

/// Fixed-length id sequence; `attention_mask[i]` is true on real tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    pub ids: Vec<u32>,
    pub attention_mask: Vec<bool>,
    /// Number of real (non-PAD) tokens.
    pub length: usize,
}

impl TokenSequence {
    pub fn max_seq_len(&self) -> usize {
        self.ids.len()
    }
}

pub fn encode_sequence(text: &str, vocab: &Vocabulary, max_seq_len: usize) -> TokenSequence {
    let mut ids: Vec<u32> = words(text).iter().take(max_seq_len).map(|w| vocab.id(w)).collect();
    let length = ids.len();
    ids.resize(max_seq_len, PAD_ID);
    let attention_mask = (0..max_seq_len).map(|i| i < length).collect();
    TokenSequence {
        ids,
        attention_mask,
        length,
    }
}

/// Character n-grams (lengths `n_range.0..=n_range.1`) of every
/// whitespace-separated word of `text`, wrapped in `<` and `>`, hashed with
/// FNV-1a and reduced modulo `buckets`. Returned sorted, so equal multisets
/// compare equal.
pub fn hash_ngrams(text: &str, n_range: (usize, usize), buckets: u64) -> Vec<u64> {
    assert!(buckets >= 1, "buckets must be >= 1");
    let mut out = Vec::new();
    for word in text.split_whitespace() {
        word_ngrams(word, n_range, buckets, &mut out);
    }
    out.sort_unstable();
    out
}

pub(crate) fn word_ngrams(word: &str, n_range: (usize, usize), buckets: u64, out: &mut Vec<u64>) {
    let mut chars: Vec<char> = Vec::with_capacity(word.len() + 2);
    chars.push('<');
    chars.extend(word.chars());
    chars.push('>');
    let mut buf = [0u8; 4];
    for n in n_range.0.max(1)..=n_range.1 {
        if n > chars.len() {
            break;
        }
        for window in chars.windows(n) {
            let mut h = Fnv1a::new();
            for c in window {
                h.update(c.encode_utf8(&mut buf).as_bytes());
            }
            out.push(h.finish() % buckets);
        }
    }
}
