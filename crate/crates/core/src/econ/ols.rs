//! Least squares with country and year fixed effects as explicit dummies.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::dist;
use super::frame::PanelFrame;
use super::linalg::{ColPivQr, Matrix};
use crate::{Error, Result, Scalar};

pub const INTERCEPT: &str = "(Intercept)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixedEffects {
    #[serde(default)]
    pub country: bool,
    #[serde(default)]
    pub year: bool,
}

impl FixedEffects {
    pub const BOTH: FixedEffects = FixedEffects { country: true, year: true };
    pub const NONE: FixedEffects = FixedEffects { country: false, year: false };
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegressionSpec {
    pub id: String,
    pub outcome: String,
    pub predictors: Vec<String>,
    pub fixed_effects: FixedEffects,
    /// Extra columns that must be non-missing for a row to enter the sample,
    /// e.g. a lagged predictor used by a sibling model.
    #[serde(default)]
    pub require_non_missing: Vec<String>,
}

impl RegressionSpec {
    pub fn new(id: &str, outcome: &str, predictors: &[&str], fixed_effects: FixedEffects) -> Self {
        RegressionSpec {
            id: id.to_string(),
            outcome: outcome.to_string(),
            predictors: predictors.iter().map(|s| s.to_string()).collect(),
            fixed_effects,
            require_non_missing: Vec::new(),
        }
    }

    pub fn requiring(mut self, fields: &[&str]) -> Self {
        self.require_non_missing = fields.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.predictors.iter().any(|p| *p == self.outcome) {
            return Err(Error::Config(format!("model '{}': outcome '{}' is also a predictor", self.id, self.outcome)));
        }
        if self.predictors.is_empty() && !self.fixed_effects.country && !self.fixed_effects.year {
            return Err(Error::Config(format!("model '{}' has no predictors and no fixed effects", self.id)));
        }
        let unique: BTreeSet<_> = self.predictors.iter().collect();
        if unique.len() != self.predictors.len() {
            return Err(Error::Config(format!("model '{}' lists a predictor twice", self.id)));
        }
        Ok(())
    }

    fn sample_fields(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.outcome.as_str())
            .chain(self.predictors.iter().map(String::as_str))
            .chain(self.require_non_missing.iter().map(String::as_str))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coefficient<T> {
    pub name: String,
    pub estimate: T,
    pub std_error: T,
    pub t_value: T,
    pub ci_low: T,
    pub ci_high: T,
    pub p_value: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressionResult<T> {
    pub spec: RegressionSpec,
    pub intercept: Coefficient<T>,
    /// Substantive predictors, in spec order. Fixed-effect dummies are kept
    /// in `design_columns`/`beta` only.
    pub coefficients: Vec<Coefficient<T>>,
    pub design_columns: Vec<String>,
    pub beta: Vec<T>,
    pub n_obs: usize,
    pub n_params: usize,
    pub df_resid: usize,
    pub rss: T,
    pub tss: T,
    pub r2: T,
    pub adj_r2: T,
    pub f_stat: T,
    pub f_p_value: T,
    pub residuals: Vec<T>,
    /// Frame row indices of the estimation sample, in frame order.
    pub rows: Vec<usize>,
    pub row_keys: Vec<(String, i32)>,
}

impl<T: Scalar> RegressionResult<T> {
    pub fn coef(&self, name: &str) -> Option<&Coefficient<T>> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

/// Design matrix and response for one specification.
#[derive(Debug, Clone)]
pub struct Design<T> {
    pub x: Matrix<T>,
    pub y: Vec<T>,
    pub columns: Vec<String>,
    pub rows: Vec<usize>,
}

/// Frame rows with every field the spec needs present and finite.
pub fn sample_rows<T: Scalar>(frame: &PanelFrame<T>, spec: &RegressionSpec) -> Result<Vec<usize>> {
    let cols: Vec<&[Option<T>]> = spec.sample_fields().map(|f| frame.column(f)).collect::<Result<_>>()?;
    Ok((0..frame.len()).filter(|&i| cols.iter().all(|c| c[i].is_some_and(|v| v.is_finite()))).collect())
}

/// Builds `[intercept | predictors | country dummies | year dummies]` over
/// the rows that survive listwise deletion. The reference levels are the
/// alphabetically first country and the earliest year present in the sample.
pub fn build_design<T: Scalar>(frame: &PanelFrame<T>, spec: &RegressionSpec) -> Result<Design<T>> {
    spec.validate()?;
    let rows = sample_rows(frame, spec)?;
    if rows.is_empty() {
        return Err(Error::InsufficientData(format!("model '{}': empty estimation sample", spec.id)));
    }
    let n = rows.len();
    let mut columns = vec![INTERCEPT.to_string()];
    let mut data: Vec<Vec<T>> = vec![vec![T::one(); n]];
    for p in &spec.predictors {
        let col = frame.column(p)?;
        data.push(rows.iter().map(|&i| col[i].expect("sample row")).collect());
        columns.push(p.clone());
    }
    if spec.fixed_effects.country {
        let levels: BTreeSet<&str> = rows.iter().map(|&i| frame.countries()[i].as_str()).collect();
        for level in levels.into_iter().skip(1) {
            data.push(rows.iter().map(|&i| if frame.countries()[i] == level { T::one() } else { T::zero() }).collect());
            columns.push(format!("country[{level}]"));
        }
    }
    if spec.fixed_effects.year {
        let levels: BTreeSet<i32> = rows.iter().map(|&i| frame.years()[i]).collect();
        for level in levels.into_iter().skip(1) {
            data.push(rows.iter().map(|&i| if frame.years()[i] == level { T::one() } else { T::zero() }).collect());
            columns.push(format!("year[{level}]"));
        }
    }
    let outcome = frame.column(&spec.outcome)?;
    let y = rows.iter().map(|&i| outcome[i].expect("sample row")).collect();
    Ok(Design { x: Matrix::from_columns(&data)?, y, columns, rows })
}

/// Fixed-effects OLS with conventional standard errors and 95% intervals.
pub fn ols_fe<T: Scalar>(frame: &PanelFrame<T>, spec: &RegressionSpec) -> Result<RegressionResult<T>> {
    ols_fe_level(frame, spec, 0.95)
}

pub fn ols_fe_level<T: Scalar>(frame: &PanelFrame<T>, spec: &RegressionSpec, level: f64) -> Result<RegressionResult<T>> {
    let design = build_design(frame, spec)?;
    let (n, k) = (design.x.rows(), design.x.cols());
    if n <= k {
        return Err(Error::InsufficientData(format!("model '{}': {n} observations for {k} parameters", spec.id)));
    }
    let qr = ColPivQr::new(&design.x);
    if !qr.is_full_rank() {
        return Err(Error::RankDeficient {
            columns: qr.dependent_columns().into_iter().map(|c| design.columns[c].clone()).collect(),
        });
    }
    let beta = qr.solve(&design.y)?;
    let fitted = design.x.mul_vec(&beta);
    let residuals: Vec<T> = design.y.iter().zip(&fitted).map(|(&y, &f)| y - f).collect();
    let rss: T = residuals.iter().map(|&e| e * e).sum();
    let nt = T::from_usize_lossy(n);
    let y_mean = design.y.iter().copied().sum::<T>() / nt;
    let tss: T = design.y.iter().map(|&y| (y - y_mean) * (y - y_mean)).sum();
    if !(tss > T::zero()) {
        return Err(Error::ZeroVariance(format!("model '{}': outcome '{}' is constant", spec.id, spec.outcome)));
    }

    let df_resid = n - k;
    let dft = T::from_usize_lossy(df_resid);
    let kt = T::from_usize_lossy(k);
    let r2 = (T::one() - rss / tss).max(T::zero()).min(T::one());
    let adj_r2 = T::one() - (T::one() - r2) * (nt - T::one()) / dft;
    let sigma2 = rss / dft;
    let (f_stat, f_p_value) = if k > 1 {
        let f = ((tss - rss) / (kt - T::one())) / sigma2;
        let p = dist::f_sf(f.as_f64(), (k - 1) as f64, df_resid as f64);
        (f, T::lit(p))
    } else {
        (T::nan(), T::nan())
    };

    let diag = qr.inverse_gram_diagonal()?;
    let tcrit = T::lit(dist::t_quantile(0.5 + level / 2.0, df_resid as f64));
    let coef_at = |j: usize| -> Coefficient<T> {
        let estimate = beta[j];
        let std_error = (sigma2 * diag[j]).sqrt();
        let t_value = estimate / std_error;
        let p_value = T::lit(dist::t_two_sided_p(t_value.as_f64(), df_resid as f64));
        Coefficient {
            name: design.columns[j].clone(),
            estimate,
            std_error,
            t_value,
            ci_low: estimate - tcrit * std_error,
            ci_high: estimate + tcrit * std_error,
            p_value,
        }
    };

    Ok(RegressionResult {
        spec: spec.clone(),
        intercept: coef_at(0),
        coefficients: (1..=spec.predictors.len()).map(coef_at).collect(),
        design_columns: design.columns.clone(),
        beta,
        n_obs: n,
        n_params: k,
        df_resid,
        rss,
        tss,
        r2,
        adj_r2,
        f_stat,
        f_p_value,
        residuals,
        row_keys: design.rows.iter().map(|&i| (frame.countries()[i].clone(), frame.years()[i])).collect(),
        rows: design.rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_frame() -> PanelFrame<f64> {
        let mut countries = Vec::new();
        let mut years = Vec::new();
        let mut x = Vec::new();
        let mut y = Vec::new();
        for (ci, c) in ["AA", "BB", "CC"].iter().enumerate() {
            for t in 0..6 {
                countries.push(c.to_string());
                years.push(2000 + t);
                let xv = ((ci * 7 + t as usize * 3) % 5) as f64 + 0.1 * t as f64;
                x.push(Some(xv));
                y.push(Some(0.5 * xv + ci as f64 * 1.3 - 0.2 * t as f64 + ((ci + t as usize) % 3) as f64 * 0.01));
            }
        }
        PanelFrame::new(countries, years).unwrap().with_column("x", x).unwrap().with_column("y", y).unwrap()
    }

    #[test]
    fn fit_statistics_are_consistent() {
        let f = toy_frame();
        let r = ols_fe(&f, &RegressionSpec::new("m", "y", &["x"], FixedEffects::BOTH)).unwrap();
        assert_eq!(r.n_obs, 18);
        assert_eq!(r.n_params, 1 + 1 + 2 + 5);
        assert_eq!(r.residuals.len(), r.n_obs);
        assert!(r.adj_r2 <= r.r2 && r.r2 <= 1.0 && r.r2 >= 0.0);
        let c = r.coef("x").unwrap();
        assert!(c.ci_low <= c.estimate && c.estimate <= c.ci_high);
        assert!(r.design_columns.contains(&"country[BB]".to_string()));
        assert!(!r.design_columns.contains(&"country[AA]".to_string()));
        assert!(!r.design_columns.contains(&"year[2000]".to_string()));
    }

    #[test]
    fn listwise_deletion_and_required_fields() {
        let mut f = toy_frame();
        let mut lag = vec![Some(1.0); f.len()];
        lag[0] = None;
        lag[6] = None;
        f.set_column("z", lag).unwrap();
        let full = ols_fe(&f, &RegressionSpec::new("m", "y", &["x"], FixedEffects::BOTH)).unwrap();
        let restricted = ols_fe(&f, &RegressionSpec::new("m", "y", &["x"], FixedEffects::BOTH).requiring(&["z"])).unwrap();
        assert_eq!(full.n_obs, 18);
        assert_eq!(restricted.n_obs, 16);
        assert!(!restricted.rows.contains(&0));
    }

    #[test]
    fn rank_deficiency_names_columns() {
        let mut f = toy_frame();
        let x = f.column("x").unwrap().to_vec();
        f.set_column("x_copy", x).unwrap();
        let err = ols_fe(&f, &RegressionSpec::new("m", "y", &["x", "x_copy"], FixedEffects::BOTH)).unwrap_err();
        match err {
            Error::RankDeficient { columns } => assert!(columns.iter().any(|c| c == "x" || c == "x_copy"), "{columns:?}"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn constant_outcome_is_zero_variance_error() {
        let mut f = toy_frame();
        f.set_column("y", vec![Some(3.0); 18]).unwrap();
        let err = ols_fe(&f, &RegressionSpec::new("m", "y", &["x"], FixedEffects::BOTH)).unwrap_err();
        assert!(matches!(err, Error::ZeroVariance(_)));
    }

    #[test]
    fn empty_sample_and_bad_spec() {
        let mut f = toy_frame();
        f.set_column("x", vec![None; 18]).unwrap();
        assert!(matches!(
            ols_fe(&f, &RegressionSpec::new("m", "y", &["x"], FixedEffects::BOTH)),
            Err(Error::InsufficientData(_))
        ));
        assert!(RegressionSpec::new("m", "y", &["y"], FixedEffects::BOTH).validate().is_err());
        assert!(RegressionSpec::new("m", "y", &[], FixedEffects::NONE).validate().is_err());
    }

    #[test]
    fn simple_regression_matches_textbook() {
        // y = 1 + 2x + e with e = (+1, -1, -1, +1): slope 2, intercept 1, residual var known
        let xs = [1.0f64, 2.0, 3.0, 4.0];
        let e = [0.5, -0.5, -0.5, 0.5];
        let f = PanelFrame::new(vec!["A".into(); 4], vec![1, 2, 3, 4])
            .unwrap()
            .with_column("x", xs.iter().map(|&v| Some(v)).collect())
            .unwrap()
            .with_column("y", xs.iter().zip(e).map(|(x, e)| Some(1.0 + 2.0 * x + e)).collect())
            .unwrap();
        let r = ols_fe(&f, &RegressionSpec::new("m", "y", &["x"], FixedEffects::NONE)).unwrap();
        let c = r.coef("x").unwrap();
        assert!((c.estimate - 2.0).abs() < 1e-12);
        assert!((r.intercept.estimate - 1.0).abs() < 1e-12);
        // sigma^2 = 1/2, sxx = 5  => se = sqrt(0.1)
        assert!((c.std_error - 0.1f64.sqrt()).abs() < 1e-12);
        assert!((r.rss - 1.0).abs() < 1e-12);
        assert!((r.f_stat - c.t_value * c.t_value).abs() < 1e-9);
        assert!((r.f_p_value - c.p_value).abs() < 1e-9);
    }
}
