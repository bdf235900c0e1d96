//! ROC AUC, DeLong's paired test, and validation against human annotations.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dist;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AucResult<T> {
    pub auc: T,
    pub n_pos: usize,
    pub n_neg: usize,
    /// DeLong variance estimate of the AUC.
    pub variance: T,
}

/// Placement counts for one classifier: for each positive, twice the
/// number of negatives it beats (ties count once); likewise for negatives.
struct Placements {
    pos: Vec<u64>,
    neg: Vec<u64>,
}

fn split<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<(Vec<T>, Vec<T>)> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: labels.len(), actual: scores.len() });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Validation("NaN score".into()));
    }
    let pos: Vec<T> = scores.iter().zip(labels).filter(|(_, &l)| l).map(|(&s, _)| s).collect();
    let neg: Vec<T> = scores.iter().zip(labels).filter(|(_, &l)| !l).map(|(&s, _)| s).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::Validation("AUC needs both classes present".into()));
    }
    Ok((pos, neg))
}

fn placements<T: Scalar>(pos: &[T], neg: &[T]) -> Placements {
    let sorted = |v: &[T]| {
        let mut s = v.to_vec();
        s.sort_by(|a, b| a.partial_cmp(b).expect("non-NaN"));
        s
    };
    let (sp, sn) = (sorted(pos), sorted(neg));
    let twice_below = |sorted: &[T], s: T| -> u64 {
        let less = sorted.partition_point(|&v| v < s);
        let le = sorted.partition_point(|&v| v <= s);
        (2 * less + (le - less)) as u64
    };
    let twice_above = |sorted: &[T], s: T| -> u64 {
        let le = sorted.partition_point(|&v| v <= s);
        let less = sorted.partition_point(|&v| v < s);
        (2 * (sorted.len() - le) + (le - less)) as u64
    };
    Placements {
        pos: pos.iter().map(|&s| twice_below(&sn, s)).collect(),
        neg: neg.iter().map(|&s| twice_above(&sp, s)).collect(),
    }
}

fn sample_cov(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    if n < 2 {
        return 0.0;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1) as f64
}

struct Components {
    auc: f64,
    v10: Vec<f64>,
    v01: Vec<f64>,
}

fn components<T: Scalar>(pos: &[T], neg: &[T]) -> Components {
    let p = placements(pos, neg);
    let (m, n) = (pos.len() as f64, neg.len() as f64);
    let total: u64 = p.pos.iter().sum();
    Components {
        auc: total as f64 / (2.0 * m * n),
        v10: p.pos.iter().map(|&c| c as f64 / (2.0 * n)).collect(),
        v01: p.neg.iter().map(|&c| c as f64 / (2.0 * m)).collect(),
    }
}

/// Mann-Whitney AUC with ties credited one half.
pub fn auc<T: Scalar>(scores: &[T], labels: &[bool]) -> Result<AucResult<T>> {
    let (pos, neg) = split(scores, labels)?;
    let c = components(&pos, &neg);
    let variance = sample_cov(&c.v10, &c.v10) / pos.len() as f64 + sample_cov(&c.v01, &c.v01) / neg.len() as f64;
    Ok(AucResult { auc: T::lit(c.auc), n_pos: pos.len(), n_neg: neg.len(), variance: T::lit(variance) })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelongTest<T> {
    pub auc_a: T,
    pub auc_b: T,
    pub z: T,
    pub p_value: T,
}

/// DeLong test for the difference of two AUCs measured on the same cases.
pub fn delong_compare<T: Scalar>(scores_a: &[T], scores_b: &[T], labels: &[bool]) -> Result<DelongTest<T>> {
    if scores_a.len() != scores_b.len() {
        return Err(Error::DimensionMismatch { expected: scores_a.len(), actual: scores_b.len() });
    }
    let (pa, na) = split(scores_a, labels)?;
    let (pb, nb) = split(scores_b, labels)?;
    let a = components(&pa, &na);
    let b = components(&pb, &nb);
    let (m, n) = (pa.len() as f64, na.len() as f64);
    let var = (sample_cov(&a.v10, &a.v10) + sample_cov(&b.v10, &b.v10) - 2.0 * sample_cov(&a.v10, &b.v10)) / m
        + (sample_cov(&a.v01, &a.v01) + sample_cov(&b.v01, &b.v01) - 2.0 * sample_cov(&a.v01, &b.v01)) / n;
    let diff = a.auc - b.auc;
    let z = if diff == 0.0 {
        0.0
    } else if var > 0.0 {
        diff / var.sqrt()
    } else {
        diff.signum() * f64::INFINITY
    };
    Ok(DelongTest { auc_a: T::lit(a.auc), auc_b: T::lit(b.auc), z: T::lit(z), p_value: T::lit(dist::normal_two_sided_p(z)) })
}

/// One human-annotated segment with Likert ratings for each orientation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub id: String,
    pub evidence: f64,
    pub intuition: f64,
    #[serde(default)]
    pub text: Option<String>,
}

pub fn load_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(if path.extension().is_some_and(|e| e == "tsv") { b'\t' } else { b',' })
        .from_path(path)
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, row) in reader.deserialize::<Annotation>().enumerate() {
        out.push(row.map_err(|e| Error::Validation(format!("{} row {}: {e}", path.display(), i + 2)))?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodAuc<T> {
    pub method: String,
    pub result: AucResult<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport<T> {
    pub n_annotations: usize,
    pub n_tied_dropped: usize,
    pub n_unmatched: usize,
    pub n_used: usize,
    pub methods: Vec<MethodAuc<T>>,
    /// First method against the second, when two or more are given.
    pub comparison: Option<DelongTest<T>>,
}

/// Labels each annotation by the sign of evidence minus intuition (ties
/// dropped) and scores every prediction method on the rows all methods cover.
pub fn validate_emi<T: Scalar>(
    annotations: &[Annotation],
    methods: &[(String, BTreeMap<String, T>)],
) -> Result<ValidationReport<T>> {
    if methods.is_empty() {
        return Err(Error::Config("validation needs at least one prediction column".into()));
    }
    let labelled: Vec<(&Annotation, bool)> =
        annotations.iter().filter(|a| a.evidence != a.intuition).map(|a| (a, a.evidence > a.intuition)).collect();
    let n_tied_dropped = annotations.len() - labelled.len();
    if labelled.is_empty() {
        return Err(Error::Validation("every annotation has equal evidence and intuition ratings".into()));
    }
    let used: Vec<&(&Annotation, bool)> =
        labelled.iter().filter(|(a, _)| methods.iter().all(|(_, m)| m.contains_key(&a.id))).collect();
    let labels: Vec<bool> = used.iter().map(|(_, l)| *l).collect();
    let columns: Vec<Vec<T>> = methods.iter().map(|(_, m)| used.iter().map(|(a, _)| m[&a.id]).collect()).collect();
    let results = methods
        .iter()
        .zip(&columns)
        .map(|((name, _), col)| Ok(MethodAuc { method: name.clone(), result: auc(col, &labels)? }))
        .collect::<Result<Vec<_>>>()?;
    let comparison = if columns.len() >= 2 { Some(delong_compare(&columns[0], &columns[1], &labels)?) } else { None };
    Ok(ValidationReport {
        n_annotations: annotations.len(),
        n_tied_dropped,
        n_unmatched: labelled.len() - used.len(),
        n_used: used.len(),
        methods: results,
        comparison,
    })
}
