//! Country-year aggregation of segment scores and the indicator join.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::econ::{percentile_interval, PanelFrame};
use crate::fusion::SegmentScore;
use crate::seed::iteration_rng;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearlyMean {
    pub country: String,
    pub year: i32,
    pub mean: f64,
    pub n: usize,
}

fn group_scores(scores: &[SegmentScore]) -> BTreeMap<(String, i32), Vec<f64>> {
    let mut groups: BTreeMap<(String, i32), Vec<f64>> = BTreeMap::new();
    for s in scores {
        groups.entry((s.country.clone(), s.year)).or_default().push(s.emi);
    }
    groups
}

fn mean<T: Scalar>(values: &[T]) -> T {
    values.iter().copied().sum::<T>() / T::from_usize_lossy(values.len())
}

/// Arithmetic mean EMI per (country, year), ordered by key.
pub fn yearly_mean(scores: &[SegmentScore]) -> Vec<YearlyMean> {
    group_scores(scores)
        .into_iter()
        .map(|((country, year), v)| YearlyMean { country, year, mean: mean(&v), n: v.len() })
        .collect()
}

/// Percentile interval of the resampled mean. Iteration `i` draws from a
/// generator seeded by `(seed, key, i)`, so the result does not depend on
/// thread scheduling.
pub fn bootstrap_mean_ci<T: Scalar>(values: &[T], iters: usize, level: f64, seed: u64, key: &str) -> Result<(T, T)> {
    if values.is_empty() {
        return Err(Error::InsufficientData("bootstrap of an empty series".into()));
    }
    if iters == 0 {
        return Err(Error::Config("bootstrap needs at least one iteration".into()));
    }
    if values.iter().all(|&v| v == values[0]) {
        return Ok((values[0], values[0]));
    }
    let n = values.len();
    let mut means: Vec<T> = (0..iters)
        .into_par_iter()
        .map(|i| {
            let mut rng = iteration_rng(seed, key, i as u64);
            let sum: T = (0..n).map(|_| values[rng.random_range(0..n)]).sum();
            sum / T::from_usize_lossy(n)
        })
        .collect();
    Ok(percentile_interval(&mut means, level))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YearlyEmi {
    pub country: String,
    pub year: i32,
    pub emi: f64,
    pub emi_ci_low: f64,
    pub emi_ci_high: f64,
    pub n_segments: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateOptions {
    pub iters: usize,
    pub level: f64,
    pub seed: u64,
}

impl Default for AggregateOptions {
    fn default() -> Self {
        AggregateOptions { iters: 10_000, level: 0.95, seed: 42 }
    }
}

/// Yearly means with bootstrap intervals, one row per (country, year).
pub fn aggregate(scores: &[SegmentScore], opts: &AggregateOptions) -> Result<Vec<YearlyEmi>> {
    let groups: Vec<_> = group_scores(scores).into_iter().collect();
    groups
        .into_par_iter()
        .map(|((country, year), v)| {
            let m = mean(&v);
            let (lo, hi) = bootstrap_mean_ci(&v, opts.iters, opts.level, opts.seed, &format!("{country}:{year}"))?;
            // rounding in the resampled sums can leave the mean a hair outside
            Ok(YearlyEmi { emi: m, emi_ci_low: lo.min(m), emi_ci_high: hi.max(m), n_segments: v.len(), country, year })
        })
        .collect()
}

/// Source column names for the indicator table. Defaults are the logical names.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndicatorColumns {
    pub country: String,
    pub year: String,
    pub ddi: String,
    pub tpl: String,
    pub clientelism: String,
    pub judicial_independence: String,
}

impl Default for IndicatorColumns {
    fn default() -> Self {
        IndicatorColumns {
            country: "country".into(),
            year: "year".into(),
            ddi: "ddi".into(),
            tpl: "tpl".into(),
            clientelism: "clientelism".into(),
            judicial_independence: "judicial_independence".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct GdpColumns {
    pub country: String,
    pub year: String,
    pub gdp_pc: String,
}

impl Default for GdpColumns {
    fn default() -> Self {
        GdpColumns { country: "country".into(), year: "year".into(), gdp_pc: "gdp_pc".into() }
    }
}

/// Column mapping for both external tables plus optional recoding of
/// source country labels, e.g. splitting one label into two cases by year.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndicatorMapping {
    pub indicators: IndicatorColumns,
    pub gdp: GdpColumns,
    pub country_codes: BTreeMap<String, String>,
    pub country_splits: Vec<CountrySplit>,
}

/// Rows of `source` with year before `before` become `early`; the rest `late`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountrySplit {
    pub source: String,
    pub before: i32,
    pub early: String,
    pub late: String,
}

impl IndicatorMapping {
    fn recode(&self, country: &str, year: i32) -> String {
        if let Some(s) = self.country_splits.iter().find(|s| s.source == country) {
            return if year < s.before { s.early.clone() } else { s.late.clone() };
        }
        self.country_codes.get(country).cloned().unwrap_or_else(|| country.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndicatorRow {
    pub country: String,
    pub year: i32,
    pub ddi: Option<f64>,
    pub tpl: Option<f64>,
    pub clientelism: Option<f64>,
    pub judicial_independence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GdpRow {
    pub country: String,
    pub year: i32,
    pub gdp_pc: Option<f64>,
}

struct Table {
    path: String,
    headers: csv::StringRecord,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Table> {
        let mut reader = csv::ReaderBuilder::new()
            .delimiter(if path.extension().is_some_and(|e| e == "tsv") { b'\t' } else { b',' })
            .from_path(path)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        let headers = reader.headers().map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?.clone();
        let rows = reader
            .records()
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
        Ok(Table { path: path.display().to_string(), headers, rows })
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.headers.iter().position(|h| h == name).ok_or_else(|| Error::Config(format!("{}: no column '{name}'", self.path)))
    }

    fn key(&self, row: &csv::StringRecord, line: usize, ci: usize, yi: usize) -> Result<(String, i32)> {
        let country = row.get(ci).unwrap_or("").trim().to_string();
        let year = row
            .get(yi)
            .unwrap_or("")
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|y| y.fract() == 0.0)
            .ok_or_else(|| Error::Validation(format!("{} line {line}: bad year", self.path)))? as i32;
        if country.is_empty() {
            return Err(Error::Validation(format!("{} line {line}: empty country", self.path)));
        }
        Ok((country, year))
    }
}

fn parse_value(raw: Option<&str>) -> Option<f64> {
    let s = raw?.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn check_unique<'a>(keys: impl Iterator<Item = (&'a str, i32)>, what: &str) -> Result<()> {
    let mut seen = std::collections::HashSet::new();
    for k in keys {
        if !seen.insert(k) {
            return Err(Error::DuplicateKey(format!("{what}: duplicate ({}, {})", k.0, k.1)));
        }
    }
    Ok(())
}

pub fn load_indicators(path: &Path, mapping: &IndicatorMapping) -> Result<Vec<IndicatorRow>> {
    let t = Table::read(path)?;
    let m = &mapping.indicators;
    let (ci, yi) = (t.index(&m.country)?, t.index(&m.year)?);
    let cols = [t.index(&m.ddi)?, t.index(&m.tpl)?, t.index(&m.clientelism)?, t.index(&m.judicial_independence)?];
    let mut out = Vec::with_capacity(t.rows.len());
    for (i, row) in t.rows.iter().enumerate() {
        let (country, year) = t.key(row, i + 2, ci, yi)?;
        let v = cols.map(|c| parse_value(row.get(c)));
        out.push(IndicatorRow {
            country: mapping.recode(&country, year),
            year,
            ddi: v[0],
            tpl: v[1],
            clientelism: v[2],
            judicial_independence: v[3],
        });
    }
    check_unique(out.iter().map(|r| (r.country.as_str(), r.year)), &t.path)?;
    Ok(out)
}

pub fn load_gdp(path: &Path, mapping: &IndicatorMapping) -> Result<Vec<GdpRow>> {
    let t = Table::read(path)?;
    let m = &mapping.gdp;
    let (ci, yi, gi) = (t.index(&m.country)?, t.index(&m.year)?, t.index(&m.gdp_pc)?);
    let mut out = Vec::with_capacity(t.rows.len());
    for (i, row) in t.rows.iter().enumerate() {
        let (country, year) = t.key(row, i + 2, ci, yi)?;
        out.push(GdpRow { country: mapping.recode(&country, year), year, gdp_pc: parse_value(row.get(gi)) });
    }
    check_unique(out.iter().map(|r| (r.country.as_str(), r.year)), &t.path)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub country: String,
    pub year: i32,
    pub emi: f64,
    pub emi_ci_low: f64,
    pub emi_ci_high: f64,
    pub n_segments: usize,
    pub ddi: Option<f64>,
    pub tpl: Option<f64>,
    pub clientelism_flipped: Option<f64>,
    pub judicial_independence: Option<f64>,
    pub log_gdp_pc: Option<f64>,
    pub emi_lag1: Option<f64>,
    pub ddi_lag1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyNote {
    pub country: String,
    pub year: i32,
    pub note: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub emi_rows: usize,
    pub joined_rows: usize,
    /// EMI country-years absent from the indicator table.
    pub dropped: Vec<KeyNote>,
    /// Joined rows with one or more missing covariates.
    pub missing: Vec<KeyNote>,
    /// GDP values that were present but not strictly positive.
    pub invalid_gdp: Vec<KeyNote>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JoinOutput {
    pub rows: Vec<PanelRow>,
    pub coverage: CoverageReport,
}

/// Inner join of yearly EMI with the indicator table on (country, year);
/// GDP attaches where available. Clientelism is sign-flipped and GDP per
/// capita log-transformed. Lags are filled on the joined rows.
pub fn join_indicators(emi: &[YearlyEmi], indicators: &[IndicatorRow], gdp: &[GdpRow]) -> Result<JoinOutput> {
    check_unique(emi.iter().map(|r| (r.country.as_str(), r.year)), "yearly EMI")?;
    check_unique(indicators.iter().map(|r| (r.country.as_str(), r.year)), "indicators")?;
    check_unique(gdp.iter().map(|r| (r.country.as_str(), r.year)), "gdp")?;
    let ind: HashMap<(&str, i32), &IndicatorRow> = indicators.iter().map(|r| ((r.country.as_str(), r.year), r)).collect();
    let gdp: HashMap<(&str, i32), &GdpRow> = gdp.iter().map(|r| ((r.country.as_str(), r.year), r)).collect();

    let mut coverage = CoverageReport { emi_rows: emi.len(), ..Default::default() };
    let mut rows = Vec::new();
    let mut sorted: Vec<&YearlyEmi> = emi.iter().collect();
    sorted.sort_by(|a, b| (&a.country, a.year).cmp(&(&b.country, b.year)));
    for e in sorted {
        let key = (e.country.as_str(), e.year);
        let note = |s: &str| KeyNote { country: e.country.clone(), year: e.year, note: s.to_string() };
        let Some(i) = ind.get(&key) else {
            coverage.dropped.push(note("no indicator row"));
            continue;
        };
        let log_gdp_pc = match gdp.get(&key).and_then(|g| g.gdp_pc) {
            Some(v) if v > 0.0 => Some(v.ln()),
            Some(v) => {
                coverage.invalid_gdp.push(note(&format!("gdp_pc {v} is not positive")));
                None
            }
            None => None,
        };
        let row = PanelRow {
            country: e.country.clone(),
            year: e.year,
            emi: e.emi,
            emi_ci_low: e.emi_ci_low,
            emi_ci_high: e.emi_ci_high,
            n_segments: e.n_segments,
            ddi: i.ddi,
            tpl: i.tpl,
            clientelism_flipped: i.clientelism.map(|v| -v),
            judicial_independence: i.judicial_independence,
            log_gdp_pc,
            emi_lag1: None,
            ddi_lag1: None,
        };
        let absent: Vec<&str> = [
            ("ddi", row.ddi),
            ("tpl", row.tpl),
            ("clientelism", row.clientelism_flipped),
            ("judicial_independence", row.judicial_independence),
            ("gdp_pc", row.log_gdp_pc),
        ]
        .iter()
        .filter(|(_, v)| v.is_none())
        .map(|(n, _)| *n)
        .collect();
        if !absent.is_empty() {
            coverage.missing.push(note(&format!("missing {}", absent.join(", "))));
        }
        rows.push(row);
    }
    coverage.joined_rows = rows.len();
    fill_lags(&mut rows);
    Ok(JoinOutput { rows, coverage })
}

/// Sets `emi_lag1` and `ddi_lag1` from the same country's previous calendar
/// year; a gap leaves them missing.
pub fn fill_lags(rows: &mut [PanelRow]) {
    let prev: HashMap<(String, i32), (f64, Option<f64>)> =
        rows.iter().map(|r| ((r.country.clone(), r.year), (r.emi, r.ddi))).collect();
    for r in rows.iter_mut() {
        let p = prev.get(&(r.country.clone(), r.year - 1));
        r.emi_lag1 = p.map(|p| p.0);
        r.ddi_lag1 = p.and_then(|p| p.1);
    }
}

pub const PANEL_COLUMNS: [&str; 9] =
    ["emi", "n_segments", "ddi", "tpl", "clientelism_flipped", "judicial_independence", "log_gdp_pc", "emi_lag1", "ddi_lag1"];

pub fn to_frame(rows: &[PanelRow]) -> Result<PanelFrame<f64>> {
    let col = |f: fn(&PanelRow) -> Option<f64>| rows.iter().map(f).collect::<Vec<_>>();
    PanelFrame::new(rows.iter().map(|r| r.country.clone()).collect(), rows.iter().map(|r| r.year).collect())?
        .with_column("emi", col(|r| Some(r.emi)))?
        .with_column("n_segments", col(|r| Some(r.n_segments as f64)))?
        .with_column("ddi", col(|r| r.ddi))?
        .with_column("tpl", col(|r| r.tpl))?
        .with_column("clientelism_flipped", col(|r| r.clientelism_flipped))?
        .with_column("judicial_independence", col(|r| r.judicial_independence))?
        .with_column("log_gdp_pc", col(|r| r.log_gdp_pc))?
        .with_column("emi_lag1", col(|r| r.emi_lag1))?
        .with_column("ddi_lag1", col(|r| r.ddi_lag1))
}

pub fn write_panel_csv(path: &Path, rows: &[PanelRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_panel_csv(path: &Path) -> Result<Vec<PanelRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
    r.deserialize()
        .collect::<std::result::Result<Vec<PanelRow>, _>>()
        .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seg(id: &str, c: &str, y: i32, emi: f64) -> SegmentScore {
        SegmentScore {
            segment_id: id.into(),
            country: c.into(),
            year: y,
            emi_llm_raw: 0.0,
            emi_emb_raw: 0.0,
            z_llm: 0.0,
            z_emb: 0.0,
            emi,
        }
    }

    fn yearly(c: &str, y: i32, emi: f64) -> YearlyEmi {
        YearlyEmi { country: c.into(), year: y, emi, emi_ci_low: emi, emi_ci_high: emi, n_segments: 1 }
    }

    fn ind(c: &str, y: i32, cl: f64) -> IndicatorRow {
        IndicatorRow {
            country: c.into(),
            year: y,
            ddi: Some(0.5),
            tpl: Some(1.0),
            clientelism: Some(cl),
            judicial_independence: Some(0.2),
        }
    }

    #[test]
    fn yearly_means() {
        let m = yearly_mean(&[seg("a", "US", 1999, 1.0), seg("b", "IS", 1999, 0.37), seg("c", "US", 1999, -1.0)]);
        assert_eq!(m.len(), 2);
        assert_eq!((m[0].country.as_str(), m[0].mean, m[0].n), ("IS", 0.37, 1));
        assert_eq!((m[1].mean, m[1].n), (0.0, 2));
    }

    #[test]
    fn bootstrap_degenerate_cases() {
        assert_eq!(bootstrap_mean_ci(&[3.0, 3.0, 3.0, 3.0], 1000, 0.95, 42, "k").unwrap(), (3.0, 3.0));
        assert_eq!(bootstrap_mean_ci(&[7.0], 1000, 0.95, 42, "k").unwrap(), (7.0, 7.0));
        assert!(bootstrap_mean_ci::<f64>(&[], 1000, 0.95, 42, "k").is_err());
    }

    #[test]
    fn bootstrap_matches_serial_oracle() {
        let mut rng = iteration_rng(42, "data", 0);
        let values: Vec<f64> = (0..100).map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let (lo, hi) = bootstrap_mean_ci(&values, 2000, 0.95, 7, "US:1999").unwrap();
        let mut means = Vec::new();
        for i in 0..2000u64 {
            let mut r = iteration_rng(7, "US:1999", i);
            let mut s = 0.0;
            for _ in 0..values.len() {
                s += values[r.random_range(0..values.len())];
            }
            means.push(s / values.len() as f64);
        }
        means.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let h = (means.len() - 1) as f64 * p;
            let (a, b) = (h.floor() as usize, h.ceil() as usize);
            means[a] + (means[b] - means[a]) * (h - a as f64)
        };
        assert!((lo - q(0.025)).abs() <= 1e-12 && (hi - q(0.975)).abs() <= 1e-12);
        assert!(lo < 0.0 && hi > 0.0);
    }

    #[test]
    fn weighted_recomposition() {
        let s: Vec<SegmentScore> = (0..37)
            .map(|i| seg(&format!("s{i}"), if i % 3 == 0 { "A" } else { "B" }, 2000 + i % 4, (i as f64 * 0.37).sin()))
            .collect();
        let m = yearly_mean(&s);
        for c in ["A", "B"] {
            let total: f64 = s.iter().filter(|x| x.country == c).map(|x| x.emi).sum();
            let recomposed: f64 = m.iter().filter(|x| x.country == c).map(|x| x.mean * x.n as f64).sum();
            assert!((total - recomposed).abs() < 1e-9);
        }
    }

    #[test]
    fn join_flips_and_logs() {
        let out = join_indicators(
            &[yearly("US", 2000, 0.1), yearly("US", 2001, 0.2), yearly("US", 2003, 0.3), yearly("IS", 2000, 0.0)],
            &[ind("US", 2000, 0.8), ind("US", 2001, -0.25), ind("US", 2003, 0.0)],
            &[
                GdpRow { country: "US".into(), year: 2000, gdp_pc: Some(std::f64::consts::E.powi(2)) },
                GdpRow { country: "US".into(), year: 2001, gdp_pc: Some(-5.0) },
            ],
        )
        .unwrap();
        assert_eq!(out.rows.len(), 3);
        assert_eq!(out.rows[0].clientelism_flipped, Some(-0.8));
        assert_eq!(out.rows[1].clientelism_flipped, Some(0.25));
        assert!((out.rows[0].log_gdp_pc.unwrap() - 2.0).abs() < 1e-15);
        assert_eq!(out.rows[1].log_gdp_pc, None);
        assert_eq!(out.coverage.invalid_gdp.len(), 1);
        assert_eq!(out.coverage.dropped.len(), 1);
        assert_eq!(out.rows[1].emi_lag1, Some(0.1));
        assert_eq!(out.rows[2].emi_lag1, None);
        assert_eq!(out.rows[0].emi_lag1, None);
    }

    #[test]
    fn duplicate_source_keys_fatal() {
        assert!(join_indicators(&[yearly("US", 2000, 0.1)], &[ind("US", 2000, 0.1), ind("US", 2000, 0.2)], &[]).is_err());
    }

    #[test]
    fn csv_loading_with_mapping() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vdem.csv");
        std::fs::write(&p, "country_text_id,year,v2x_delibdem,v2cltrnslw,v2xnp_client,v2juhcind,other\nDEU,1985,0.7,1.2,0.1,2.0,x\nDEU,1995,0.8,,0.2,NA,y\n").unwrap();
        let mapping = IndicatorMapping {
            indicators: IndicatorColumns {
                country: "country_text_id".into(),
                year: "year".into(),
                ddi: "v2x_delibdem".into(),
                tpl: "v2cltrnslw".into(),
                clientelism: "v2xnp_client".into(),
                judicial_independence: "v2juhcind".into(),
            },
            country_splits: vec![CountrySplit { source: "DEU".into(), before: 1990, early: "DE_W".into(), late: "DE".into() }],
            ..Default::default()
        };
        let rows = load_indicators(&p, &mapping).unwrap();
        assert_eq!(rows[0].country, "DE_W");
        assert_eq!(rows[1].country, "DE");
        assert_eq!(rows[1].tpl, None);
        assert_eq!(rows[1].judicial_independence, None);
        assert_eq!(rows[0].clientelism, Some(0.1));
    }

    #[test]
    fn panel_csv_round_trip() {
        let out = join_indicators(
            &[yearly("US", 2000, 0.1), yearly("US", 2001, 0.2)],
            &[ind("US", 2000, 0.8), ind("US", 2001, 0.3)],
            &[],
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("panel.csv");
        write_panel_csv(&p, &out.rows).unwrap();
        assert_eq!(read_panel_csv(&p).unwrap(), out.rows);
        let f = to_frame(&out.rows).unwrap();
        assert_eq!(f.column("emi_lag1").unwrap(), &[None, Some(0.1)]);
    }
}
