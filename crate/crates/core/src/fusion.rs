//! Standardization of the two EMI components and their average.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::{Error, Result, Scalar};

/// Mean and sample (n - 1) standard deviation.
pub fn mean_sd<T: Scalar>(values: &[T]) -> Result<(T, T)> {
    if values.len() < 2 {
        return Err(Error::InsufficientData(format!("z-score needs at least 2 values, got {}", values.len())));
    }
    let n = T::from_usize_lossy(values.len());
    let mean = values.iter().copied().sum::<T>() / n;
    let ss = values.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
    let sd = (ss / (n - T::one())).sqrt();
    if !(sd > T::zero()) {
        return Err(Error::ZeroVariance("zero variance in z-score input".into()));
    }
    Ok((mean, sd))
}

pub fn zscore<T: Scalar>(values: &[T]) -> Result<Vec<T>> {
    let (mean, sd) = mean_sd(values)?;
    Ok(values.iter().map(|&v| (v - mean) / sd).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZScope {
    #[default]
    Country,
    Global,
}

/// One raw component value (LLM or embedding difference score) for a segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentScore {
    pub segment_id: String,
    pub country: String,
    pub year: i32,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentScore {
    pub segment_id: String,
    pub country: String,
    pub year: i32,
    pub emi_llm_raw: f64,
    pub emi_emb_raw: f64,
    pub z_llm: f64,
    pub z_emb: f64,
    pub emi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupStats {
    pub group: String,
    pub n: usize,
    pub llm_mean: f64,
    pub llm_sd: f64,
    pub emb_mean: f64,
    pub emb_sd: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedSegment {
    pub segment_id: String,
    pub missing: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FusionOutput {
    pub scores: Vec<SegmentScore>,
    pub dropped: Vec<DroppedSegment>,
    pub groups: Vec<GroupStats>,
}

/// Joins the two component streams on segment id, standardizes each within
/// its group, and averages the z values. Output is ordered by segment id.
pub fn fuse(llm: &[ComponentScore], emb: &[ComponentScore], scope: ZScope) -> Result<FusionOutput> {
    let llm_by_id: BTreeMap<&str, &ComponentScore> = llm.iter().map(|c| (c.segment_id.as_str(), c)).collect();
    let emb_by_id: BTreeMap<&str, &ComponentScore> = emb.iter().map(|c| (c.segment_id.as_str(), c)).collect();
    if llm_by_id.len() != llm.len() || emb_by_id.len() != emb.len() {
        return Err(Error::DuplicateKey("segment id repeated within a component stream".into()));
    }

    let ids: BTreeSet<&str> = llm_by_id.keys().chain(emb_by_id.keys()).copied().collect();
    let mut dropped = Vec::new();
    let mut groups: BTreeMap<String, Vec<(&ComponentScore, f64)>> = BTreeMap::new();
    for id in ids {
        match (llm_by_id.get(id), emb_by_id.get(id)) {
            (Some(l), Some(e)) => {
                let key = match scope {
                    ZScope::Country => l.country.clone(),
                    ZScope::Global => "*".to_string(),
                };
                groups.entry(key).or_default().push((l, e.value));
            }
            (Some(_), None) => dropped.push(DroppedSegment { segment_id: id.to_string(), missing: "embedding".into() }),
            (None, Some(_)) => dropped.push(DroppedSegment { segment_id: id.to_string(), missing: "llm".into() }),
            (None, None) => unreachable!(),
        }
    }
    if groups.is_empty() {
        return Err(Error::InsufficientData("no segment carries both EMI components".into()));
    }

    let mut scores = Vec::new();
    let mut stats = Vec::new();
    for (group, members) in groups {
        let llm_raw: Vec<f64> = members.iter().map(|(l, _)| l.value).collect();
        let emb_raw: Vec<f64> = members.iter().map(|&(_, e)| e).collect();
        let (llm_mean, llm_sd) = mean_sd(&llm_raw).map_err(|e| group_err(&group, "LLM", e))?;
        let (emb_mean, emb_sd) = mean_sd(&emb_raw).map_err(|e| group_err(&group, "embedding", e))?;
        for ((l, e), (&lr, &er)) in members.iter().zip(llm_raw.iter().zip(&emb_raw)) {
            debug_assert_eq!(l.value, lr);
            let z_llm = (lr - llm_mean) / llm_sd;
            let z_emb = (er - emb_mean) / emb_sd;
            scores.push(SegmentScore {
                segment_id: l.segment_id.clone(),
                country: l.country.clone(),
                year: l.year,
                emi_llm_raw: lr,
                emi_emb_raw: *e,
                z_llm,
                z_emb,
                emi: (z_llm + z_emb) / 2.0,
            });
        }
        stats.push(GroupStats { group, n: members.len(), llm_mean, llm_sd, emb_mean, emb_sd });
    }
    scores.sort_by(|a, b| a.segment_id.cmp(&b.segment_id));
    Ok(FusionOutput { scores, dropped, groups: stats })
}

fn group_err(group: &str, component: &str, e: Error) -> Error {
    Error::Validation(format!("standardization group '{group}', {component} component: {e}"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn comp(id: &str, country: &str, v: f64) -> ComponentScore {
        ComponentScore { segment_id: id.into(), country: country.into(), year: 2000, value: v }
    }

    #[test]
    fn zscore_examples() {
        assert_eq!(zscore(&[1.0, 2.0, 3.0]).unwrap(), vec![-1.0, 0.0, 1.0]);
        assert!(matches!(zscore(&[5.0, 5.0, 5.0]), Err(Error::ZeroVariance(_))));
        assert!(zscore(&[1.0]).is_err());
        let z = zscore(&[0.0, 10.0]).unwrap();
        assert!((z[0] + std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert!((z[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        let zf = zscore(&[1.0f32, 2.0, 3.0]).unwrap();
        assert_eq!(zf, vec![-1.0f32, 0.0, 1.0]);
    }

    #[test]
    fn two_point_group() {
        let out =
            fuse(&[comp("a", "US", 2.0), comp("b", "US", -2.0)], &[comp("a", "US", 0.2), comp("b", "US", -0.2)], ZScope::Country)
                .unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((out.scores[0].z_llm - h).abs() < 1e-15 && (out.scores[0].z_emb - h).abs() < 1e-15);
        assert!((out.scores[0].emi - h).abs() < 1e-15);
        assert!((out.scores[1].emi + h).abs() < 1e-15);
    }

    #[test]
    fn disjoint_keys_fatal() {
        assert!(fuse(&[comp("a", "US", 1.0)], &[comp("b", "US", 1.0)], ZScope::Country).is_err());
    }

    #[test]
    fn identical_components_give_that_z() {
        let vals = [0.3, -1.2, 2.2, 0.0];
        let l: Vec<_> = vals.iter().enumerate().map(|(i, &v)| comp(&format!("s{i}"), "US", v)).collect();
        let out = fuse(&l, &l, ZScope::Country).unwrap();
        let z = zscore(&vals).unwrap();
        for (s, z) in out.scores.iter().zip(z) {
            assert_eq!(s.emi, z);
        }
    }

    #[test]
    fn missing_component_reported() {
        let out = fuse(
            &[comp("a", "US", 1.0), comp("b", "US", 2.0), comp("c", "US", 0.0)],
            &[comp("a", "US", 1.0), comp("b", "US", -1.0), comp("d", "US", 0.0)],
            ZScope::Country,
        )
        .unwrap();
        assert_eq!(out.scores.len(), 2);
        assert_eq!(out.dropped.len(), 2);
        assert_eq!(out.dropped[0].missing, "embedding");
        assert_eq!(out.dropped[1].missing, "llm");
    }

    #[test]
    fn scope_changes_grouping() {
        let l = vec![comp("a", "US", 1.0), comp("b", "US", 2.0), comp("c", "IS", 10.0), comp("d", "IS", 30.0)];
        let e = vec![comp("a", "US", 0.1), comp("b", "US", 0.2), comp("c", "IS", 0.5), comp("d", "IS", 0.1)];
        assert_eq!(fuse(&l, &e, ZScope::Country).unwrap().groups.len(), 2);
        assert_eq!(fuse(&l, &e, ZScope::Global).unwrap().groups.len(), 1);
    }

    proptest! {
        #[test]
        fn zscore_monotone(vals in prop::collection::vec(-100.0f64..100.0, 2..40)) {
            let (_, sd) = match mean_sd(&vals) { Ok(s) => s, Err(_) => return Ok(()) };
            prop_assume!(sd > 1e-9);
            let z = zscore(&vals).unwrap();
            for i in 0..vals.len() {
                for j in 0..vals.len() {
                    if vals[i] < vals[j] {
                        prop_assert!(z[i] < z[j]);
                    }
                }
            }
        }

        #[test]
        fn negating_inputs_negates_emi(pairs in prop::collection::vec((-4.0f64..4.0, -2.0f64..2.0), 3..30)) {
            let l: Vec<_> = pairs.iter().enumerate().map(|(i, p)| comp(&format!("s{i:03}"), "US", p.0)).collect();
            let e: Vec<_> = pairs.iter().enumerate().map(|(i, p)| comp(&format!("s{i:03}"), "US", p.1)).collect();
            let neg = |v: &[ComponentScore]| v.iter().map(|c| ComponentScore { value: -c.value, ..c.clone() }).collect::<Vec<_>>();
            if let (Ok(a), Ok(b)) = (fuse(&l, &e, ZScope::Country), fuse(&neg(&l), &neg(&e), ZScope::Country)) {
                for (x, y) in a.scores.iter().zip(&b.scores) {
                    prop_assert_eq!(x.emi, -y.emi);
                }
                let mean = a.scores.iter().map(|s| s.emi).sum::<f64>() / a.scores.len() as f64;
                prop_assert!(mean.abs() < 1e-9);
            }
        }
    }
}
