//! Fits the configured models on the panel and renders the results as JSON
//! and as plain-text tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use anyhow::Result;
use emi_core::econ::{
    bootstrap_coef, diagnostics, lr_compare, ols::ols_fe_level, pearson_r_ci, BootstrapOptions, FixedEffects, JarqueBera,
    RegressionSpec, ResampleMode, UnitRootTest, ValidationReport,
};
use emi_core::panel::{to_frame, PanelRow};
use emi_core::{PanelFrame, RegressionResult};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ModelFile, RunConfig};

/// A real that may be infinite; JSON has no literal for that.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Real {
    Finite(f64),
    Label(InfLabel),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InfLabel {
    #[serde(rename = "inf")]
    Inf,
}

impl From<f64> for Real {
    fn from(v: f64) -> Self {
        if v.is_infinite() && v > 0.0 {
            Real::Label(InfLabel::Inf)
        } else {
            Real::Finite(v)
        }
    }
}

impl std::fmt::Display for Real {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Real::Finite(v) => write!(f, "{v:.3}"),
            Real::Label(_) => write!(f, "inf"),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CountryCorrelation {
    pub country: String,
    pub n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_high: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoefReport {
    pub name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub t_value: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fit {
    pub n_obs: usize,
    pub n_params: usize,
    pub df_resid: usize,
    pub r2: f64,
    pub adj_r2: f64,
    pub f_stat: f64,
    pub f_p_value: f64,
    pub rss: f64,
    pub intercept: CoefReport,
    pub coefficients: Vec<CoefReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Diagnostics {
    pub vif: BTreeMap<String, Real>,
    pub max_vif: Option<Real>,
    pub adf: Option<UnitRootTest<f64>>,
    pub kpss: Option<UnitRootTest<f64>>,
    pub jarque_bera: Option<JarqueBera<f64>>,
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelReport {
    pub id: String,
    pub outcome: String,
    pub predictors: Vec<String>,
    pub fixed_effects: FixedEffects,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fit: Option<Fit>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Diagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub restricted: String,
    pub full: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub chi2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub df: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_obs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub model: String,
    pub predictor: String,
    pub iters: usize,
    pub mode: ResampleMode,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_low: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ci_high: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub singular: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub config_hash: String,
    pub level: f64,
    pub panel_rows: usize,
    pub correlations: Vec<CountryCorrelation>,
    pub models: Vec<ModelReport>,
    pub comparisons: Vec<ComparisonReport>,
    pub bootstraps: Vec<BootstrapReport>,
}

fn coef(c: &emi_core::Coefficient) -> CoefReport {
    CoefReport {
        name: c.name.clone(),
        estimate: c.estimate,
        std_error: c.std_error,
        t_value: c.t_value,
        ci_low: c.ci_low,
        ci_high: c.ci_high,
        p_value: c.p_value,
    }
}

/// Adds `{var}_lag{k}` columns named by a model but absent from the panel.
fn ensure_lags(frame: &mut PanelFrame, specs: &[RegressionSpec]) -> Result<()> {
    let have: Vec<String> = frame.column_names().map(String::from).collect();
    let mut wanted: BTreeMap<i32, Vec<String>> = BTreeMap::new();
    for name in specs.iter().flat_map(|s| s.predictors.iter().chain(&s.require_non_missing).chain(std::iter::once(&s.outcome))) {
        if have.contains(name) {
            continue;
        }
        if let Some((base, k)) = name.rsplit_once("_lag") {
            if let Ok(k) = k.parse::<i32>() {
                if have.iter().any(|h| h == base) && k > 0 {
                    wanted.entry(k).or_default().push(base.to_string());
                }
            }
        }
    }
    for (k, mut vars) in wanted {
        vars.sort();
        vars.dedup();
        let refs: Vec<&str> = vars.iter().map(String::as_str).collect();
        frame.add_lags(&refs, k)?;
    }
    Ok(())
}

fn correlations(rows: &[PanelRow], level: f64) -> Vec<CountryCorrelation> {
    let mut countries: Vec<&str> = rows.iter().map(|r| r.country.as_str()).collect();
    countries.sort();
    countries.dedup();
    countries
        .into_iter()
        .map(|c| {
            let (x, y): (Vec<f64>, Vec<f64>) =
                rows.iter().filter(|r| r.country == c).filter_map(|r| r.ddi.map(|d| (r.emi, d))).unzip();
            match pearson_r_ci(&x, &y, level) {
                Ok(r) => CountryCorrelation {
                    country: c.to_string(),
                    n: r.n,
                    r: Some(r.r),
                    ci_low: Some(r.ci_low),
                    ci_high: Some(r.ci_high),
                    p_value: Some(r.p_value),
                    error: None,
                },
                Err(e) => CountryCorrelation {
                    country: c.to_string(),
                    n: x.len(),
                    r: None,
                    ci_low: None,
                    ci_high: None,
                    p_value: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

pub fn analyze(rows: &[PanelRow], models: &ModelFile, cfg: &RunConfig, config_hash: String) -> Result<AnalysisReport> {
    let level = cfg.analyze.level;
    let mut frame = to_frame(rows)?;
    ensure_lags(&mut frame, &models.models)?;

    let fits: Vec<(ModelReport, Option<RegressionResult>)> = models
        .models
        .par_iter()
        .map(|spec| {
            let mut rep = ModelReport {
                id: spec.id.clone(),
                outcome: spec.outcome.clone(),
                predictors: spec.predictors.clone(),
                fixed_effects: spec.fixed_effects,
                fit: None,
                diagnostics: None,
                error: None,
            };
            match ols_fe_level(&frame, spec, level) {
                Ok(fit) => {
                    rep.fit = Some(Fit {
                        n_obs: fit.n_obs,
                        n_params: fit.n_params,
                        df_resid: fit.df_resid,
                        r2: fit.r2,
                        adj_r2: fit.adj_r2,
                        f_stat: fit.f_stat,
                        f_p_value: fit.f_p_value,
                        rss: fit.rss,
                        intercept: coef(&fit.intercept),
                        coefficients: fit.coefficients.iter().map(coef).collect(),
                    });
                    match diagnostics(&frame, &fit) {
                        Ok(d) => {
                            rep.diagnostics = Some(Diagnostics {
                                vif: d.vif.iter().map(|(k, &v)| (k.clone(), v.into())).collect(),
                                max_vif: d.max_vif.map(Real::from),
                                adf: d.adf,
                                kpss: d.kpss,
                                jarque_bera: d.jarque_bera,
                                skipped: d.skipped,
                            })
                        }
                        Err(e) => rep.error = Some(format!("diagnostics: {e}")),
                    }
                    (rep, Some(fit))
                }
                Err(e) => {
                    rep.error = Some(e.to_string());
                    (rep, None)
                }
            }
        })
        .collect();
    let by_id: BTreeMap<&str, &RegressionResult> =
        fits.iter().filter_map(|(r, f)| f.as_ref().map(|f| (r.id.as_str(), f))).collect();

    let comparisons = models
        .comparisons
        .iter()
        .map(|c| {
            let mut rep = ComparisonReport {
                restricted: c.restricted.clone(),
                full: c.full.clone(),
                chi2: None,
                df: None,
                p_value: None,
                n_obs: None,
                error: None,
            };
            match (by_id.get(c.restricted.as_str()), by_id.get(c.full.as_str())) {
                (Some(r), Some(f)) => match lr_compare(r, f) {
                    Ok(t) => {
                        rep.chi2 = Some(t.chi2);
                        rep.df = Some(t.df);
                        rep.p_value = Some(t.p_value);
                        rep.n_obs = Some(t.n_obs);
                    }
                    Err(e) => rep.error = Some(e.to_string()),
                },
                _ => rep.error = Some("a model in this comparison could not be estimated".into()),
            }
            rep
        })
        .collect();

    let bootstraps = models
        .bootstraps
        .iter()
        .map(|b| {
            let opts = BootstrapOptions {
                iters: b.iters.unwrap_or(cfg.analyze.bootstrap_iters),
                seed: cfg.seeds.bootstrap,
                level,
                mode: b.mode.unwrap_or(cfg.analyze.bootstrap_mode),
            };
            let mut rep = BootstrapReport {
                model: b.model.clone(),
                predictor: b.predictor.clone(),
                iters: opts.iters,
                mode: opts.mode,
                seed: opts.seed,
                estimate: None,
                ci_low: None,
                ci_high: None,
                singular: None,
                warning: None,
                error: None,
            };
            let spec = models.model(&b.model).expect("validated model file");
            match bootstrap_coef(&frame, spec, &b.predictor, &opts) {
                Ok(r) => {
                    rep.estimate = Some(r.estimate);
                    rep.ci_low = Some(r.ci_low);
                    rep.ci_high = Some(r.ci_high);
                    rep.singular = Some(r.singular);
                    rep.warning = r.warning;
                }
                Err(e) => rep.error = Some(e.to_string()),
            }
            rep
        })
        .collect();

    Ok(AnalysisReport {
        config_hash,
        level,
        panel_rows: rows.len(),
        correlations: correlations(rows, level),
        models: fits.into_iter().map(|(r, _)| r).collect(),
        comparisons,
        bootstraps,
    })
}

fn star(p: f64) -> &'static str {
    if p < 0.05 {
        "*"
    } else {
        ""
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.3}")).unwrap_or_else(|| "-".into())
}

/// One table per outcome: a column per model, estimate and interval per
/// predictor row, fit statistics and diagnostics at the foot.
fn model_table(out: &mut String, outcome: &str, models: &[&ModelReport], level: f64) {
    let mut predictors: Vec<&str> = Vec::new();
    for m in models {
        for p in &m.predictors {
            if !predictors.contains(&p.as_str()) {
                predictors.push(p);
            }
        }
    }
    let label_w = predictors.iter().map(|p| p.len()).chain([12]).max().unwrap_or(12) + 2;
    let col_w = models.iter().map(|m| m.id.len()).chain([18]).max().unwrap_or(18) + 2;
    let _ = writeln!(out, "Outcome: {outcome}");
    let mut header = format!("{:label_w$}", "");
    for m in models {
        let _ = write!(header, "{:>col_w$}", m.id);
    }
    let _ = writeln!(out, "{header}");
    let _ = writeln!(out, "{}", "-".repeat(header.len()));
    let cell = |m: &ModelReport, name: &str| -> Option<CoefReport> {
        let f = m.fit.as_ref()?;
        if name == "(Intercept)" {
            return Some(f.intercept.clone());
        }
        f.coefficients.iter().find(|c| c.name == name).cloned()
    };
    for name in std::iter::once("(Intercept)").chain(predictors.iter().copied()) {
        let mut est = format!("{name:label_w$}");
        let mut ci = format!("{:label_w$}", "");
        for m in models {
            match cell(m, name) {
                Some(c) => {
                    let _ = write!(est, "{:>col_w$}", format!("{:.3}{}", c.estimate, star(c.p_value)));
                    let _ = write!(ci, "{:>col_w$}", format!("[{:.3}, {:.3}]", c.ci_low, c.ci_high));
                }
                None => {
                    let _ = write!(est, "{:>col_w$}", "");
                    let _ = write!(ci, "{:>col_w$}", "");
                }
            }
        }
        let _ = writeln!(out, "{est}");
        let _ = writeln!(out, "{ci}");
    }
    let _ = writeln!(out, "{}", "-".repeat(header.len()));
    type Row = (&'static str, fn(&ModelReport) -> String);
    let foot: [Row; 10] = [
        ("Num.Obs.", |m| m.fit.as_ref().map(|f| f.n_obs.to_string()).unwrap_or_else(|| "-".into())),
        ("R2", |m| opt(m.fit.as_ref().map(|f| f.r2))),
        ("R2 Adj.", |m| opt(m.fit.as_ref().map(|f| f.adj_r2))),
        ("F", |m| opt(m.fit.as_ref().map(|f| f.f_stat))),
        ("FE", |m| match (m.fixed_effects.country, m.fixed_effects.year) {
            (true, true) => "country+year".into(),
            (true, false) => "country".into(),
            (false, true) => "year".into(),
            (false, false) => "none".into(),
        }),
        ("max VIF", |m| m.diagnostics.as_ref().and_then(|d| d.max_vif).map(|v| v.to_string()).unwrap_or_else(|| "-".into())),
        ("ADF p", |m| opt(m.diagnostics.as_ref().and_then(|d| d.adf.as_ref()).map(|t| t.p_value))),
        ("KPSS p", |m| opt(m.diagnostics.as_ref().and_then(|d| d.kpss.as_ref()).map(|t| t.p_value))),
        ("JB p", |m| opt(m.diagnostics.as_ref().and_then(|d| d.jarque_bera.as_ref()).map(|t| t.p_value))),
        ("status", |m| if m.error.is_some() { "failed".into() } else { "ok".into() }),
    ];
    for (label, f) in foot {
        let mut line = format!("{label:label_w$}");
        for m in models {
            let _ = write!(line, "{:>col_w$}", f(m));
        }
        let _ = writeln!(out, "{line}");
    }
    let _ = writeln!(out, "* p < 0.05; intervals are {:.0}% confidence intervals.", level * 100.0);
    for m in models {
        if let Some(e) = &m.error {
            let _ = writeln!(out, "{}: {e}", m.id);
        }
    }
    let _ = writeln!(out);
}

pub fn render(rep: &AnalysisReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# config {}", rep.config_hash);
    let _ = writeln!(out, "Panel rows: {}\n", rep.panel_rows);

    let _ = writeln!(out, "Correlation of EMI and DDI by country ({:.0}% CI)", rep.level * 100.0);
    let _ = writeln!(out, "{:<10}{:>5}{:>9}{:>20}{:>9}", "country", "n", "r", "CI", "p");
    for c in &rep.correlations {
        match c.r {
            Some(r) => {
                let ci = format!("[{:.3}, {:.3}]", c.ci_low.unwrap_or(f64::NAN), c.ci_high.unwrap_or(f64::NAN));
                let _ = writeln!(out, "{:<10}{:>5}{:>9.3}{:>20}{:>9.3}", c.country, c.n, r, ci, c.p_value.unwrap_or(f64::NAN));
            }
            None => {
                let _ = writeln!(out, "{:<10}{:>5}  {}", c.country, c.n, c.error.as_deref().unwrap_or(""));
            }
        }
    }
    let _ = writeln!(out);

    let mut outcomes: Vec<&str> = Vec::new();
    for m in &rep.models {
        if !outcomes.contains(&m.outcome.as_str()) {
            outcomes.push(&m.outcome);
        }
    }
    for o in outcomes {
        let ms: Vec<&ModelReport> = rep.models.iter().filter(|m| m.outcome == o).collect();
        model_table(&mut out, o, &ms, rep.level);
    }

    if !rep.comparisons.is_empty() {
        let _ = writeln!(out, "Likelihood-ratio comparisons");
        for c in &rep.comparisons {
            match (c.chi2, c.df, c.p_value) {
                (Some(x), Some(df), Some(p)) => {
                    let _ = writeln!(
                        out,
                        "{} vs {}: chi2({df}) = {x:.3}, p = {p:.4}, n = {}",
                        c.restricted,
                        c.full,
                        c.n_obs.unwrap_or(0)
                    );
                }
                _ => {
                    let _ = writeln!(out, "{} vs {}: {}", c.restricted, c.full, c.error.as_deref().unwrap_or("not computed"));
                }
            }
        }
        let _ = writeln!(out);
    }
    if !rep.bootstraps.is_empty() {
        let _ = writeln!(out, "Bootstrap intervals");
        for b in &rep.bootstraps {
            let head = format!("{} [{}], {} resamples ({:?}), seed {}", b.model, b.predictor, b.iters, b.mode, b.seed);
            match (b.estimate, b.ci_low, b.ci_high) {
                (Some(e), Some(l), Some(h)) => {
                    let _ = writeln!(out, "{head}: estimate {e:.3}, CI [{l:.3}, {h:.3}], skipped {}", b.singular.unwrap_or(0));
                    if let Some(w) = &b.warning {
                        let _ = writeln!(out, "  warning: {w}");
                    }
                }
                _ => {
                    let _ = writeln!(out, "{head}: {}", b.error.as_deref().unwrap_or("not computed"));
                }
            }
        }
    }
    out
}

pub fn render_validation(rep: &ValidationReport<f64>) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "Annotations: {} (tied and dropped {}, unmatched {}, used {})",
        rep.n_annotations, rep.n_tied_dropped, rep.n_unmatched, rep.n_used
    );
    let _ = writeln!(out, "{:<12}{:>8}{:>8}{:>8}", "method", "AUC", "pos", "neg");
    for m in &rep.methods {
        let _ = writeln!(out, "{:<12}{:>8.3}{:>8}{:>8}", m.method, m.result.auc, m.result.n_pos, m.result.n_neg);
    }
    if let (Some(d), [a, b, ..]) = (&rep.comparison, rep.methods.as_slice()) {
        let _ = writeln!(out, "DeLong {} vs {}: z = {:.3}, p = {:.4}", a.method, b.method, d.z, d.p_value);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infinite_vif_serializes_as_label() {
        let v: BTreeMap<&str, Real> = [("a", Real::from(f64::INFINITY)), ("b", Real::from(1.5))].into_iter().collect();
        assert_eq!(serde_json::to_string(&v).unwrap(), r#"{"a":"inf","b":1.5}"#);
        let back: BTreeMap<String, Real> = serde_json::from_str(r#"{"a":"inf","b":1.5}"#).unwrap();
        assert_eq!(back["a"], Real::Label(InfLabel::Inf));
    }
}
