//! Rating prompts, response validation, and aggregation of per-model ratings.
//!
//! The networked side (sending prompts to endpoints, retries, caching) lives
//! in the `emi-remote` crate; everything here is pure.

use std::collections::BTreeMap;
use std::ops::RangeInclusive;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result};

const PROCEDURAL_TEMPLATE: &str = include_str!("procedural_prompt.txt");
const EPISTEMIC_TEMPLATE: &str = include_str!("epistemic_prompt.txt");
const USER_PREFIX: &str = "Here is the Input Text: ";

pub const RATING_RANGE: RangeInclusive<i64> = 0..=4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Procedural,
    Epistemic,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Procedural => "procedural",
            Task::Epistemic => "epistemic",
        }
    }

    /// Keys the model must return, each an integer on the 0..=4 scale.
    pub fn schema(self) -> &'static [(&'static str, RangeInclusive<i64>)] {
        const PROCEDURAL: &[(&str, RangeInclusive<i64>)] = &[("procedural", RATING_RANGE)];
        const EPISTEMIC: &[(&str, RangeInclusive<i64>)] = &[("evidence_free", RATING_RANGE), ("evidence_based", RATING_RANGE)];
        match self {
            Task::Procedural => PROCEDURAL,
            Task::Epistemic => EPISTEMIC,
        }
    }

    fn template(self) -> &'static str {
        match self {
            Task::Procedural => PROCEDURAL_TEMPLATE,
            Task::Epistemic => EPISTEMIC_TEMPLATE,
        }
    }

    /// First line of the system prompt; the mock backend keys on it.
    pub fn signature(self) -> &'static str {
        self.template().lines().next().expect("non-empty template")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

/// English display name for a BCP-47 tag, keyed on the primary subtag.
pub fn language_name(tag: &str) -> Result<&'static str> {
    let primary = tag.split(['-', '_']).next().unwrap_or("").to_ascii_lowercase();
    let name = match primary.as_str() {
        "en" => "English",
        "de" => "German",
        "it" => "Italian",
        "is" => "Icelandic",
        "pl" => "Polish",
        "tr" => "Turkish",
        "fr" => "French",
        "es" => "Spanish",
        "nl" => "Dutch",
        "da" => "Danish",
        "sv" => "Swedish",
        "no" | "nb" | "nn" => "Norwegian",
        "fi" => "Finnish",
        "pt" => "Portuguese",
        "cs" => "Czech",
        _ => return Err(Error::UnsupportedLanguage(tag.to_string())),
    };
    Ok(name)
}

/// System + user messages for one rating request. The text is appended to
/// the user message as-is and never touches the system template.
pub fn build_prompt(task: Task, language: &str, text: &str) -> Result<Vec<Message>> {
    let name = language_name(language)?;
    let system = task.template().trim_end().replace("{language}", name);
    Ok(vec![
        Message { role: Role::System, content: system },
        Message { role: Role::User, content: format!("{USER_PREFIX}{text}") },
    ])
}

pub fn build_procedural_prompt(language: &str, text: &str) -> Result<Vec<Message>> {
    build_prompt(Task::Procedural, language, text)
}

pub fn build_epistemic_prompt(language: &str, text: &str) -> Result<Vec<Message>> {
    build_prompt(Task::Epistemic, language, text)
}

/// Strips the fixed prefix from a user message built by [`build_prompt`].
pub fn input_text(user_content: &str) -> &str {
    user_content.strip_prefix(USER_PREFIX).unwrap_or(user_content)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedRating {
    pub values: BTreeMap<String, i64>,
    /// Keys present in the payload but not in the schema.
    pub extra_fields: Vec<String>,
}

fn first_json_object(raw: &str) -> Option<serde_json::Map<String, Value>> {
    raw.char_indices().filter(|&(_, c)| c == '{').find_map(|(i, _)| {
        let mut stream = serde_json::Deserializer::from_str(&raw[i..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(Value::Object(map))) => Some(map),
            _ => None,
        }
    })
}

pub fn parse_rating_payload(raw: &str, schema: &[(&str, RangeInclusive<i64>)]) -> Result<ParsedRating> {
    let fail = |reason: String| Error::RatingParse { reason, raw: raw.to_string() };
    let obj = first_json_object(raw).ok_or_else(|| fail("no JSON object".into()))?;
    let mut values = BTreeMap::new();
    for (key, range) in schema {
        let v = obj.get(*key).ok_or_else(|| fail(format!("missing field '{key}'")))?;
        let n = v
            .as_i64()
            .filter(|_| v.is_i64() || v.is_u64())
            .ok_or_else(|| fail(format!("field '{key}' is not an integer: {v}")))?;
        if !range.contains(&n) {
            return Err(fail(format!("field '{key}' = {n} outside {}..={}", range.start(), range.end())));
        }
        values.insert(key.to_string(), n);
    }
    let extra_fields: Vec<String> = obj.keys().filter(|k| !schema.iter().any(|(s, _)| s == k)).cloned().collect();
    if !extra_fields.is_empty() {
        tracing::warn!(?extra_fields, "rating payload carries extra fields");
    }
    Ok(ParsedRating { values, extra_fields })
}

/// One model's procedural rating. `segment_id` is the id of the rated unit,
/// which is a speech id when filtering happens before chunking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProceduralRating {
    pub segment_id: String,
    pub model_name: String,
    pub rating: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EpistemicRating {
    pub segment_id: String,
    pub model_name: String,
    pub evidence_based: u8,
    pub evidence_free: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleEpistemicScore {
    pub segment_id: String,
    pub mean_evidence: f64,
    pub mean_intuition: f64,
    pub emi_llm_raw: f64,
    pub n_models: usize,
}

/// Averages the available model ratings for one segment; `None` when no
/// model produced a rating.
pub fn ensemble_epistemic(segment_id: &str, ratings: &[EpistemicRating]) -> Option<EnsembleEpistemicScore> {
    if ratings.is_empty() {
        return None;
    }
    let n = ratings.len() as f64;
    let mean_evidence = ratings.iter().map(|r| f64::from(r.evidence_based)).sum::<f64>() / n;
    let mean_intuition = ratings.iter().map(|r| f64::from(r.evidence_free)).sum::<f64>() / n;
    Some(EnsembleEpistemicScore {
        segment_id: segment_id.to_string(),
        mean_evidence,
        mean_intuition,
        emi_llm_raw: mean_evidence - mean_intuition,
        n_models: ratings.len(),
    })
}

/// Groups ratings by segment and ensembles each group, in segment-id order.
pub fn ensemble_all(ratings: &[EpistemicRating]) -> Vec<EnsembleEpistemicScore> {
    let mut groups: BTreeMap<&str, Vec<EpistemicRating>> = BTreeMap::new();
    for r in ratings {
        groups.entry(&r.segment_id).or_default().push(r.clone());
    }
    groups.into_iter().filter_map(|(id, rs)| ensemble_epistemic(id, &rs)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProceduralDecision {
    pub id: String,
    pub mean_rating: Option<f64>,
    pub n_models: usize,
    pub keep: bool,
    pub reason: Option<String>,
}

/// Keeps a unit iff the mean of its model ratings is at most `threshold`.
/// Units without any rating are excluded as `unrated`.
pub fn filter_procedural<'a>(
    ids: impl IntoIterator<Item = &'a str>,
    ratings: &[ProceduralRating],
    threshold: u8,
) -> Vec<ProceduralDecision> {
    let mut by_id: BTreeMap<&str, (u32, usize)> = BTreeMap::new();
    for r in ratings {
        let e = by_id.entry(&r.segment_id).or_default();
        e.0 += u32::from(r.rating);
        e.1 += 1;
    }
    ids.into_iter()
        .map(|id| match by_id.get(id) {
            Some(&(sum, n)) => {
                let mean = f64::from(sum) / n as f64;
                let keep = mean <= f64::from(threshold);
                ProceduralDecision {
                    id: id.to_string(),
                    mean_rating: Some(mean),
                    n_models: n,
                    keep,
                    reason: (!keep).then(|| "procedural".to_string()),
                }
            }
            None => ProceduralDecision {
                id: id.to_string(),
                mean_rating: None,
                n_models: 0,
                keep: false,
                reason: Some("unrated".to_string()),
            },
        })
        .collect()
}
