//! Evidence/intuition anchor vectors and cosine-based segment scoring.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

pub const ANCHOR_ENTRIES: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorCategory {
    Evidence,
    Intuition,
}

impl AnchorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            AnchorCategory::Evidence => "evidence",
            AnchorCategory::Intuition => "intuition",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorEmbedMode {
    /// One "term: definition" string per entry.
    #[default]
    Joined,
    /// Term and definition embedded as two separate strings.
    Separate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorEntry {
    pub term: String,
    pub definition: String,
}

impl AnchorEntry {
    pub fn joined(&self) -> String {
        format!("{}: {}", self.term, self.definition)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorSet {
    pub language: String,
    pub evidence_entries: Vec<AnchorEntry>,
    pub intuition_entries: Vec<AnchorEntry>,
}

#[derive(Debug, Deserialize)]
struct AnchorRow {
    category: String,
    term: String,
    definition: String,
}

impl AnchorSet {
    pub fn new(language: impl Into<String>, evidence: Vec<AnchorEntry>, intuition: Vec<AnchorEntry>) -> Result<Self> {
        let set = AnchorSet { language: language.into(), evidence_entries: evidence, intuition_entries: intuition };
        set.validate()?;
        Ok(set)
    }

    fn validate(&self) -> Result<()> {
        for cat in [AnchorCategory::Evidence, AnchorCategory::Intuition] {
            let entries = self.entries(cat);
            if entries.len() != ANCHOR_ENTRIES {
                return Err(Error::Validation(format!(
                    "anchor set '{}': category {} has {} entries, expected {ANCHOR_ENTRIES}",
                    self.language,
                    cat.as_str(),
                    entries.len()
                )));
            }
            let mut seen = HashSet::new();
            for e in entries {
                if e.term.trim().is_empty() || e.definition.trim().is_empty() {
                    return Err(Error::Validation(format!(
                        "anchor set '{}': empty term or definition in category {}",
                        self.language,
                        cat.as_str()
                    )));
                }
                if !seen.insert(e.term.trim().to_lowercase()) {
                    return Err(Error::Validation(format!(
                        "anchor set '{}': duplicate term '{}' in category {}",
                        self.language,
                        e.term,
                        cat.as_str()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn entries(&self, category: AnchorCategory) -> &[AnchorEntry] {
        match category {
            AnchorCategory::Evidence => &self.evidence_entries,
            AnchorCategory::Intuition => &self.intuition_entries,
        }
    }

    /// Strings to embed for one category under the given mode.
    pub fn embedding_texts(&self, category: AnchorCategory, mode: AnchorEmbedMode) -> Vec<String> {
        let entries = self.entries(category);
        match mode {
            AnchorEmbedMode::Joined => entries.iter().map(AnchorEntry::joined).collect(),
            AnchorEmbedMode::Separate => entries.iter().flat_map(|e| [e.term.clone(), e.definition.clone()]).collect(),
        }
    }
}

/// Reads a `category,term,definition` CSV with header.
pub fn load_anchors(path: impl AsRef<Path>, language: impl Into<String>) -> Result<AnchorSet> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    let mut evidence = Vec::new();
    let mut intuition = Vec::new();
    for row in reader.deserialize::<AnchorRow>() {
        let row = row.map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        let entry = AnchorEntry { term: row.term, definition: row.definition };
        match row.category.to_ascii_lowercase().as_str() {
            "evidence" => evidence.push(entry),
            "intuition" => intuition.push(entry),
            other => {
                return Err(Error::Validation(format!("{}: unknown anchor category '{other}'", path.display())));
            }
        }
    }
    AnchorSet::new(language, evidence, intuition)
}

pub fn norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

fn ensure_nonzero<T: Scalar>(v: &[T], what: &str) -> Result<T> {
    let n = norm(v);
    if !(n > T::zero()) || !n.is_finite() {
        return Err(Error::ZeroVector(what.to_string()));
    }
    Ok(n)
}

/// Cosine similarity clamped to [-1, 1].
pub fn cosine<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), actual: b.len() });
    }
    let na = ensure_nonzero(a, "first cosine argument")?;
    let nb = ensure_nonzero(b, "second cosine argument")?;
    let dot = a.iter().zip(b).map(|(&x, &y)| x * y).sum::<T>();
    Ok((dot / (na * nb)).max(-T::one()).min(T::one()))
}

/// Arithmetic mean of equal-length vectors, optionally L2-normalizing each
/// input first.
pub fn mean_vector<T: Scalar>(vectors: &[Vec<T>], normalize_before_mean: bool) -> Result<Vec<T>> {
    let first = vectors.first().ok_or_else(|| Error::InsufficientData("mean of zero vectors".into()))?;
    let dim = first.len();
    let mut acc = vec![T::zero(); dim];
    for v in vectors {
        if v.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: v.len() });
        }
        let scale = if normalize_before_mean { T::one() / ensure_nonzero(v, "anchor entry embedding")? } else { T::one() };
        for (a, &x) in acc.iter_mut().zip(v) {
            *a = *a + x * scale;
        }
    }
    let n = T::from_usize_lossy(vectors.len());
    Ok(acc.into_iter().map(|a| a / n).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorVectors<T = f64> {
    pub language: String,
    pub evidence_vector: Vec<T>,
    pub intuition_vector: Vec<T>,
    pub dim: usize,
}

impl<T: Scalar> AnchorVectors<T> {
    /// Averages each category's entry embeddings into one anchor vector.
    pub fn from_entry_embeddings(
        language: impl Into<String>,
        evidence: &[Vec<T>],
        intuition: &[Vec<T>],
        normalize_before_mean: bool,
    ) -> Result<Self> {
        let language = language.into();
        let evidence_vector = mean_vector(evidence, normalize_before_mean)?;
        let intuition_vector = mean_vector(intuition, normalize_before_mean)?;
        let dim = evidence_vector.len();
        if intuition_vector.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, actual: intuition_vector.len() });
        }
        ensure_nonzero(&evidence_vector, &format!("evidence anchor for '{language}'"))?;
        ensure_nonzero(&intuition_vector, &format!("intuition anchor for '{language}'"))?;
        Ok(AnchorVectors { language, evidence_vector, intuition_vector, dim })
    }

    pub fn swapped(&self) -> Self {
        AnchorVectors {
            language: self.language.clone(),
            evidence_vector: self.intuition_vector.clone(),
            intuition_vector: self.evidence_vector.clone(),
            dim: self.dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentEmbeddingScore<T = f64> {
    pub segment_id: String,
    pub cos_evidence: T,
    pub cos_intuition: T,
    pub emi_emb_raw: T,
}

pub fn score_segment_embedding<T: Scalar>(
    segment_id: &str,
    segment_vector: &[T],
    anchors: &AnchorVectors<T>,
) -> Result<SegmentEmbeddingScore<T>> {
    if segment_vector.len() != anchors.dim {
        return Err(Error::DimensionMismatch { expected: anchors.dim, actual: segment_vector.len() });
    }
    let cos_evidence = cosine(segment_vector, &anchors.evidence_vector)?;
    let cos_intuition = cosine(segment_vector, &anchors.intuition_vector)?;
    Ok(SegmentEmbeddingScore {
        segment_id: segment_id.to_string(),
        cos_evidence,
        cos_intuition,
        emi_emb_raw: cos_evidence - cos_intuition,
    })
}
