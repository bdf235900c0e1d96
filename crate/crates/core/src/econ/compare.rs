//! Likelihood-ratio comparison of nested Gaussian linear models.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::dist;
use super::ols::RegressionResult;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrTest<T> {
    pub restricted: String,
    pub full: String,
    pub chi2: T,
    pub df: usize,
    pub p_value: T,
    pub n_obs: usize,
}

pub fn lr_compare<T: Scalar>(restricted: &RegressionResult<T>, full: &RegressionResult<T>) -> Result<LrTest<T>> {
    if restricted.row_keys != full.row_keys {
        return Err(Error::Validation(format!(
            "models '{}' ({} obs) and '{}' ({} obs) are fit on different samples",
            restricted.spec.id, restricted.n_obs, full.spec.id, full.n_obs
        )));
    }
    let full_cols: BTreeSet<&String> = full.design_columns.iter().collect();
    if let Some(extra) = restricted.design_columns.iter().find(|c| !full_cols.contains(c)) {
        return Err(Error::Validation(format!(
            "model '{}' is not nested in '{}': column '{extra}' absent from the larger model",
            restricted.spec.id, full.spec.id
        )));
    }
    let df = full.n_params - restricted.n_params;
    let n = full.n_obs;
    let chi2 = if df == 0 { T::zero() } else { (T::from_usize_lossy(n) * (restricted.rss / full.rss).ln()).max(T::zero()) };
    let p = if df == 0 { 1.0 } else { dist::chi2_sf(chi2.as_f64(), df as f64) };
    Ok(LrTest { restricted: restricted.spec.id.clone(), full: full.spec.id.clone(), chi2, df, p_value: T::lit(p), n_obs: n })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::econ::ols::{ols_fe, FixedEffects, RegressionSpec};
    use crate::econ::PanelFrame;

    fn frame() -> PanelFrame<f64> {
        let n = 24;
        let x: Vec<Option<f64>> = (0..n).map(|i| Some(((i * 7) % 11) as f64)).collect();
        let z: Vec<Option<f64>> = (0..n).map(|i| Some(((i * 5) % 13) as f64 * 0.3)).collect();
        let y: Vec<Option<f64>> =
            (0..n).map(|i| Some(x[i].unwrap() * 0.7 + z[i].unwrap() + ((i * 3) % 5) as f64 * 0.2)).collect();
        PanelFrame::new(
            (0..n).map(|i| if i < 12 { "AA".into() } else { "BB".into() }).collect(),
            (0..n).map(|i| 2000 + (i % 12) as i32).collect(),
        )
        .unwrap()
        .with_column("x", x)
        .unwrap()
        .with_column("z", z)
        .unwrap()
        .with_column("y", y)
        .unwrap()
    }

    #[test]
    fn identical_models() {
        let f = frame();
        let m = ols_fe(&f, &RegressionSpec::new("a", "y", &["x"], FixedEffects::NONE)).unwrap();
        let t = lr_compare(&m, &m).unwrap();
        assert_eq!(t.chi2, 0.0);
        assert_eq!(t.p_value, 1.0);
    }

    #[test]
    fn matches_closed_form() {
        let f = frame();
        let r = ols_fe(&f, &RegressionSpec::new("r", "y", &["x"], FixedEffects::NONE)).unwrap();
        let u = ols_fe(&f, &RegressionSpec::new("u", "y", &["x", "z"], FixedEffects::NONE)).unwrap();
        let t = lr_compare(&r, &u).unwrap();
        assert_eq!(t.df, 1);
        assert!((t.chi2 - 24.0 * (r.rss / u.rss).ln()).abs() < 1e-9);
        assert!(t.p_value < 0.05);
    }

    #[test]
    fn different_samples_rejected() {
        let mut f = frame();
        let mut z = f.column("z").unwrap().to_vec();
        z[3] = None;
        f.set_column("z", z).unwrap();
        let r = ols_fe(&f, &RegressionSpec::new("r", "y", &["x"], FixedEffects::NONE)).unwrap();
        let u = ols_fe(&f, &RegressionSpec::new("u", "y", &["x", "z"], FixedEffects::NONE)).unwrap();
        assert!(lr_compare(&r, &u).is_err());
        let r2 = ols_fe(&f, &RegressionSpec::new("r", "y", &["x"], FixedEffects::NONE).requiring(&["z"])).unwrap();
        assert!(lr_compare(&r2, &u).is_ok());
    }

    #[test]
    fn non_nested_rejected() {
        let f = frame();
        let a = ols_fe(&f, &RegressionSpec::new("a", "y", &["x"], FixedEffects::NONE)).unwrap();
        let b = ols_fe(&f, &RegressionSpec::new("b", "y", &["z"], FixedEffects::NONE)).unwrap();
        assert!(lr_compare(&a, &b).is_err());
    }
}
