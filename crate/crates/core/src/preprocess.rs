//! Lexical quality filters and fixed-size chunking of speeches into segments.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::SpeechRecord;
use crate::{Error, Result};

pub const COMMON_WORD_COUNT: usize = 100;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub segment_id: String,
    pub speech_id: String,
    pub country: String,
    pub year: i32,
    pub language: String,
    pub chunk_index: usize,
    pub text: String,
    pub token_count: usize,
}

/// Whitespace tokenization; punctuation stays attached to its word.
pub fn tokenize(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

/// Lowercase a token and strip leading/trailing non-alphanumerics.
pub fn normalize_token(token: &str) -> String {
    token.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// The 100 most frequent words of a language, lowercase.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommonWordList {
    language: String,
    words: Vec<String>,
    lookup: HashSet<String>,
}

impl CommonWordList {
    pub fn new(language: impl Into<String>, words: Vec<String>) -> Result<Self> {
        let language = language.into();
        if words.len() != COMMON_WORD_COUNT {
            return Err(Error::Validation(format!(
                "common-word list for '{language}' has {} entries, expected {COMMON_WORD_COUNT}",
                words.len()
            )));
        }
        let mut lookup = HashSet::with_capacity(words.len());
        for w in &words {
            if w.trim().is_empty() {
                return Err(Error::Validation(format!("common-word list for '{language}' has an empty entry")));
            }
            if *w != w.to_lowercase() {
                return Err(Error::Validation(format!("common-word list for '{language}': '{w}' is not lowercase")));
            }
            if !lookup.insert(w.clone()) {
                return Err(Error::Validation(format!("common-word list for '{language}': duplicate '{w}'")));
            }
        }
        Ok(CommonWordList { language, words, lookup })
    }

    /// Loads a one-token-per-line file; blank lines are ignored.
    pub fn load(path: impl AsRef<Path>, language: impl Into<String>) -> Result<Self> {
        let path = path.as_ref();
        let body = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let words = body.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect();
        CommonWordList::new(language, words)
    }

    /// Derives a list by frequency over the given texts (ties broken
    /// alphabetically). Used only when no shipped list exists.
    pub fn derive<'a>(language: impl Into<String>, texts: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut counts: HashMap<String, u64> = HashMap::new();
        for text in texts {
            for tok in tokenize(text) {
                let norm = normalize_token(tok);
                if !norm.is_empty() {
                    *counts.entry(norm).or_default() += 1;
                }
            }
        }
        let mut ranked: Vec<_> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let words: Vec<String> = ranked.into_iter().take(COMMON_WORD_COUNT).map(|(w, _)| w).collect();
        CommonWordList::new(language, words)
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn contains(&self, normalized: &str) -> bool {
        self.lookup.contains(normalized)
    }
}

pub fn common_word_ratio(text: &str, list: &CommonWordList) -> Result<f64> {
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::InsufficientData("common-word ratio is undefined for zero tokens".into()));
    }
    let hits = tokens.iter().filter(|t| list.contains(&normalize_token(t))).count();
    Ok(hits as f64 / tokens.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LexicalThresholds {
    pub ratio_threshold: f64,
    pub min_tokens: usize,
}

impl Default for LexicalThresholds {
    fn default() -> Self {
        LexicalThresholds { ratio_threshold: 0.05, min_tokens: 11 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    MinTokens,
    LexicalRatio,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::MinTokens => "min_tokens",
            DropReason::LexicalRatio => "lexical_ratio",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterDecision {
    pub token_count: usize,
    /// `None` when the speech was already dropped for length.
    pub ratio: Option<f64>,
    pub drop: Option<DropReason>,
}

impl FilterDecision {
    pub fn keep(&self) -> bool {
        self.drop.is_none()
    }
}

/// Drops a speech with fewer than `min_tokens` tokens or a common-word ratio
/// below `ratio_threshold`; both boundaries are kept.
pub fn apply_lexical_filters(speech: &SpeechRecord, list: &CommonWordList, thresholds: LexicalThresholds) -> FilterDecision {
    let token_count = tokenize(&speech.text).len();
    if token_count < thresholds.min_tokens || token_count == 0 {
        return FilterDecision { token_count, ratio: None, drop: Some(DropReason::MinTokens) };
    }
    let ratio = common_word_ratio(&speech.text, list).expect("token_count > 0");
    let drop = (ratio < thresholds.ratio_threshold).then_some(DropReason::LexicalRatio);
    FilterDecision { token_count, ratio: Some(ratio), drop }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkParams {
    pub target: usize,
    pub min_chunk: usize,
}

impl Default for ChunkParams {
    fn default() -> Self {
        ChunkParams { target: 150, min_chunk: 50 }
    }
}

/// Chunk sizes for a speech of `n` tokens.
///
/// Full runs of `target` tokens, then the residual; a residual shorter than
/// `min_chunk` is folded into the preceding run.
pub fn chunk_sizes(n: usize, params: ChunkParams) -> Vec<usize> {
    assert!(params.target > 0, "chunk target must be positive");
    if n == 0 {
        return Vec::new();
    }
    if n <= params.target {
        return vec![n];
    }
    let mut sizes = vec![params.target; n / params.target];
    let residual = n % params.target;
    if residual > 0 {
        if residual < params.min_chunk {
            *sizes.last_mut().expect("n > target") += residual;
        } else {
            sizes.push(residual);
        }
    }
    sizes
}

pub fn chunk(speech: &SpeechRecord, params: ChunkParams) -> Vec<Segment> {
    let tokens = tokenize(&speech.text);
    let mut start = 0;
    chunk_sizes(tokens.len(), params)
        .into_iter()
        .enumerate()
        .map(|(chunk_index, size)| {
            let run = &tokens[start..start + size];
            start += size;
            Segment {
                segment_id: format!("{}#{chunk_index}", speech.speech_id),
                speech_id: speech.speech_id.clone(),
                country: speech.country.clone(),
                year: speech.year,
                language: speech.language.clone(),
                chunk_index,
                text: run.join(" "),
                token_count: size,
            }
        })
        .collect()
}
