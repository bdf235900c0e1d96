//! Residual and design diagnostics: VIF, Jarque-Bera, ADF and KPSS.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dist;
use super::frame::PanelFrame;
use super::linalg::{ColPivQr, Matrix};
use super::ols::RegressionResult;
use crate::{Error, Result, Scalar};

/// Variance inflation factor of each column against the others plus an
/// intercept. A column that adds no rank is reported as `+inf`.
pub fn vif<T: Scalar>(columns: &[(String, Vec<T>)]) -> Result<BTreeMap<String, T>> {
    if columns.len() < 2 {
        return Err(Error::InsufficientData(format!("VIF needs at least 2 predictors, got {}", columns.len())));
    }
    let n = columns[0].1.len();
    if let Some((_, c)) = columns.iter().find(|(_, c)| c.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, actual: c.len() });
    }
    let mut out = BTreeMap::new();
    for (j, (name, target)) in columns.iter().enumerate() {
        let mut aux = vec![vec![T::one(); n]];
        aux.extend(columns.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, (_, c))| c.clone()));
        out.insert(name.clone(), aux_vif(aux, target)?);
    }
    Ok(out)
}

fn aux_vif<T: Scalar>(aux: Vec<Vec<T>>, target: &[T]) -> Result<T> {
    // Keep only the independent regressors so the projection is well defined.
    let qr = ColPivQr::new(&Matrix::from_columns(&aux)?);
    let dependent = qr.dependent_columns();
    let basis: Vec<Vec<T>> = aux.into_iter().enumerate().filter(|(i, _)| !dependent.contains(i)).map(|(_, c)| c).collect();
    let mut with_target = basis.clone();
    with_target.push(target.to_vec());
    if ColPivQr::new(&Matrix::from_columns(&with_target)?).rank() <= basis.len() {
        return Ok(T::infinity());
    }
    let x = Matrix::from_columns(&basis)?;
    let beta = ColPivQr::new(&x).solve(target)?;
    let fitted = x.mul_vec(&beta);
    let n = T::from_usize_lossy(target.len());
    let mean = target.iter().copied().sum::<T>() / n;
    let tss: T = target.iter().map(|&v| (v - mean) * (v - mean)).sum();
    let rss: T = target.iter().zip(&fitted).map(|(&v, &f)| (v - f) * (v - f)).sum();
    Ok((tss / rss).max(T::one()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JarqueBera<T> {
    pub statistic: T,
    pub p_value: T,
    pub skewness: T,
    pub kurtosis: T,
}

pub fn jarque_bera<T: Scalar>(series: &[T]) -> Result<JarqueBera<T>> {
    if series.len() < 8 {
        return Err(Error::InsufficientData(format!("Jarque-Bera needs n >= 8, got {}", series.len())));
    }
    let n = T::from_usize_lossy(series.len());
    let mean = series.iter().copied().sum::<T>() / n;
    let moment = |k: i32| series.iter().map(|&v| (v - mean).powi(k)).sum::<T>() / n;
    let m2 = moment(2);
    if !(m2 > T::zero()) {
        return Err(Error::ZeroVariance("Jarque-Bera input is constant".into()));
    }
    let skewness = moment(3) / m2.powf(T::lit(1.5));
    let kurtosis = moment(4) / (m2 * m2);
    let excess = kurtosis - T::lit(3.0);
    let statistic = n / T::lit(6.0) * (skewness * skewness + excess * excess / T::lit(4.0));
    let p_value = T::lit(dist::chi2_sf(statistic.as_f64(), 2.0));
    Ok(JarqueBera { statistic, p_value, skewness, kurtosis })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnitRootTest<T> {
    pub statistic: T,
    pub p_value: T,
    pub lags: usize,
    pub n_obs: usize,
}

const ADF_P: [f64; 8] = [0.01, 0.025, 0.05, 0.10, 0.90, 0.95, 0.975, 0.99];
const ADF_N: [f64; 6] = [25.0, 50.0, 100.0, 250.0, 500.0, f64::INFINITY];
/// Dickey-Fuller tau quantiles for the model with a constant.
const ADF_TABLE: [[f64; 8]; 6] = [
    [-3.75, -3.33, -3.00, -2.63, -0.37, 0.00, 0.34, 0.72],
    [-3.58, -3.22, -2.93, -2.60, -0.40, -0.03, 0.29, 0.66],
    [-3.51, -3.17, -2.89, -2.58, -0.42, -0.05, 0.26, 0.63],
    [-3.46, -3.14, -2.88, -2.57, -0.42, -0.06, 0.24, 0.62],
    [-3.44, -3.13, -2.87, -2.57, -0.43, -0.07, 0.24, 0.61],
    [-3.43, -3.12, -2.86, -2.57, -0.44, -0.07, 0.23, 0.60],
];

const KPSS_P: [f64; 4] = [0.10, 0.05, 0.025, 0.01];
const KPSS_CRIT: [f64; 4] = [0.347, 0.463, 0.574, 0.739];

fn adf_critical_row(n: usize) -> [f64; 8] {
    let n = n as f64;
    if n <= ADF_N[0] {
        return ADF_TABLE[0];
    }
    for i in 1..ADF_N.len() {
        if n <= ADF_N[i] {
            if ADF_N[i].is_infinite() {
                return ADF_TABLE[i - 1];
            }
            let w = (n - ADF_N[i - 1]) / (ADF_N[i] - ADF_N[i - 1]);
            let mut row = [0.0; 8];
            for (k, r) in row.iter_mut().enumerate() {
                *r = ADF_TABLE[i - 1][k] + w * (ADF_TABLE[i][k] - ADF_TABLE[i - 1][k]);
            }
            return row;
        }
    }
    ADF_TABLE[ADF_TABLE.len() - 1]
}

/// Piecewise-linear map from a statistic to a probability through a table
/// of (critical value, probability) knots sorted by critical value,
/// clamped to the table's end points.
fn interpolate(stat: f64, crit: &[f64], probs: &[f64]) -> f64 {
    if stat <= crit[0] {
        return probs[0];
    }
    for i in 1..crit.len() {
        if stat <= crit[i] {
            let w = (stat - crit[i - 1]) / (crit[i] - crit[i - 1]);
            return probs[i - 1] + w * (probs[i] - probs[i - 1]);
        }
    }
    probs[probs.len() - 1]
}

pub fn adf_p_value(stat: f64, n: usize) -> f64 {
    if stat.is_nan() {
        return f64::NAN;
    }
    interpolate(stat, &adf_critical_row(n), &ADF_P)
}

pub fn kpss_p_value(stat: f64) -> f64 {
    if stat.is_nan() {
        return f64::NAN;
    }
    interpolate(stat, &KPSS_CRIT, &KPSS_P)
}

fn check_length<T>(series: &[T], what: &str) -> Result<()> {
    if series.len() < 10 {
        return Err(Error::InsufficientData(format!("{what} needs n >= 10, got {}", series.len())));
    }
    Ok(())
}

/// Augmented Dickey-Fuller test with a constant and a fixed lag order.
pub fn adf_test<T: Scalar>(series: &[T]) -> Result<UnitRootTest<T>> {
    check_length(series, "ADF")?;
    let n = series.len();
    let schwert = (12.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize;
    let lags = schwert.min((n - 4) / 2);
    adf_with_lags(series, lags)
}

pub fn adf_with_lags<T: Scalar>(series: &[T], lags: usize) -> Result<UnitRootTest<T>> {
    let n = series.len();
    let diff: Vec<T> = series.windows(2).map(|w| w[1] - w[0]).collect();
    // rows t = lags..diff.len(): dy[t] on 1, y[t], dy[t-1..t-lags]
    let rows = diff.len().saturating_sub(lags);
    if rows <= lags + 2 {
        return Err(Error::InsufficientData(format!("ADF with {lags} lags leaves {rows} observations")));
    }
    let y: Vec<T> = (lags..diff.len()).map(|t| diff[t]).collect();
    let mut cols = vec![vec![T::one(); rows], (lags..diff.len()).map(|t| series[t]).collect()];
    for l in 1..=lags {
        cols.push((lags..diff.len()).map(|t| diff[t - l]).collect());
    }
    let x = Matrix::from_columns(&cols)?;
    let qr = ColPivQr::new(&x);
    let beta = qr.solve(&y)?;
    let fitted = x.mul_vec(&beta);
    let rss: T = y.iter().zip(&fitted).map(|(&a, &b)| (a - b) * (a - b)).sum();
    let df = rows - cols.len();
    let sigma2 = rss / T::from_usize_lossy(df);
    let se = (sigma2 * qr.inverse_gram_diagonal()?[1]).sqrt();
    let statistic = beta[1] / se;
    let p_value = T::lit(adf_p_value(statistic.as_f64(), n));
    Ok(UnitRootTest { statistic, p_value, lags, n_obs: rows })
}

/// KPSS test of level stationarity with Bartlett-weighted long-run variance.
pub fn kpss_test<T: Scalar>(series: &[T]) -> Result<UnitRootTest<T>> {
    check_length(series, "KPSS")?;
    let n = series.len();
    let nt = T::from_usize_lossy(n);
    let mean = series.iter().copied().sum::<T>() / nt;
    let e: Vec<T> = series.iter().map(|&v| v - mean).collect();
    let mut partial = T::zero();
    let mut eta = T::zero();
    for &v in &e {
        partial = partial + v;
        eta = eta + partial * partial;
    }
    eta = eta / (nt * nt);
    let lags = ((4.0 * (n as f64 / 100.0).powf(0.25)).floor() as usize).min(n - 1);
    let mut s2 = e.iter().map(|&v| v * v).sum::<T>() / nt;
    for l in 1..=lags {
        let w = T::one() - T::from_usize_lossy(l) / T::from_usize_lossy(lags + 1);
        let gamma = (l..n).map(|t| e[t] * e[t - l]).sum::<T>() / nt;
        s2 = s2 + T::lit(2.0) * w * gamma;
    }
    if !(s2 > T::zero()) {
        return Err(Error::ZeroVariance("KPSS long-run variance is not positive".into()));
    }
    let statistic = eta / s2;
    Ok(UnitRootTest { statistic, p_value: T::lit(kpss_p_value(statistic.as_f64())), lags, n_obs: n })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport<T> {
    pub vif: BTreeMap<String, T>,
    pub max_vif: Option<T>,
    pub adf: Option<UnitRootTest<T>>,
    pub kpss: Option<UnitRootTest<T>>,
    pub jarque_bera: Option<JarqueBera<T>>,
    /// Tests that could not be run, with the reason.
    pub skipped: Vec<String>,
}

/// VIF over the substantive predictors on the estimation sample, and
/// residual tests on the pooled residual series in panel order.
pub fn diagnostics<T: Scalar>(frame: &PanelFrame<T>, fit: &RegressionResult<T>) -> Result<DiagnosticsReport<T>> {
    let mut skipped = Vec::new();
    let mut vif_map = BTreeMap::new();
    if fit.spec.predictors.len() >= 2 {
        let cols = fit
            .spec
            .predictors
            .iter()
            .map(|p| {
                Ok((
                    p.clone(),
                    fit.rows.iter().map(|&r| frame.column(p).map(|c| c[r].expect("sample row"))).collect::<Result<Vec<T>>>()?,
                ))
            })
            .collect::<Result<Vec<_>>>()?;
        vif_map = vif(&cols)?;
    } else {
        skipped.push("vif: fewer than 2 predictors".to_string());
    }
    let max_vif = vif_map.values().copied().reduce(T::max);
    let mut run = |name: &str, r: Result<()>| {
        if let Err(e) = r {
            skipped.push(format!("{name}: {e}"));
        }
    };
    let mut adf = None;
    let mut kpss = None;
    let mut jb = None;
    run("adf", adf_test(&fit.residuals).map(|t| adf = Some(t)));
    run("kpss", kpss_test(&fit.residuals).map(|t| kpss = Some(t)));
    run("jarque_bera", jarque_bera(&fit.residuals).map(|t| jb = Some(t)));
    Ok(DiagnosticsReport { vif: vif_map, max_vif, adf, kpss, jarque_bera: jb, skipped })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, StudentT};

    fn normals(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    #[test]
    fn vif_orthogonal_and_duplicate() {
        let a = vec![1.0f64, -1.0, 1.0, -1.0];
        let b = vec![1.0f64, 1.0, -1.0, -1.0];
        let v = vif(&[("a".into(), a.clone()), ("b".into(), b)]).unwrap();
        assert!((v["a"] - 1.0).abs() < 1e-9 && (v["b"] - 1.0).abs() < 1e-9);
        let v = vif(&[("a".into(), a.clone()), ("a2".into(), a)]).unwrap();
        assert!(v["a"].is_infinite() && v["a2"].is_infinite());
        assert!(vif(&[("a".to_string(), vec![1.0, 2.0])]).is_err());
    }

    #[test]
    fn vif_with_collinear_pair_and_free_third() {
        let x1: Vec<f64> = (0..12).map(|i| (i as f64).sin()).collect();
        let x3: Vec<f64> = (0..12).map(|i| ((i * i) % 7) as f64).collect();
        let v = vif(&[("x1".into(), x1.clone()), ("x2".into(), x1), ("x3".into(), x3)]).unwrap();
        assert!(v["x1"].is_infinite());
        assert!(v["x3"].is_finite() && v["x3"] >= 1.0);
    }

    #[test]
    fn jb_symmetric_mesokurtic() {
        // Symmetric points with m4 / m2^2 = 3: {0 x4, +-1 x1, +-a} solved for a.
        // Use the classic fixture {-sqrt3, 0, 0, 0, 0, sqrt3} scaled: m2 = 1, m4 = 3
        let s = 3f64.sqrt();
        let v = [-s, 0.0, 0.0, 0.0, 0.0, s, -s, 0.0, 0.0, 0.0, 0.0, s];
        let jb = jarque_bera(&v).unwrap();
        assert!(jb.statistic.abs() < 1e-12, "{}", jb.statistic);
        assert!((jb.p_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn jb_normal_vs_heavy_tails() {
        assert!(jarque_bera(&normals(42, 10_000)).unwrap().p_value > 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let t3 = StudentT::new(3.0).unwrap();
        let heavy: Vec<f64> = (0..10_000).map(|_| t3.sample(&mut rng)).collect();
        assert!(jarque_bera(&heavy).unwrap().p_value < 0.01);
        assert!(jarque_bera(&[1.0; 10]).is_err());
    }

    #[test]
    fn unit_root_tests_on_simulated_series() {
        let wn = normals(42, 200);
        assert_eq!(adf_test(&wn).unwrap().p_value, 0.01);
        assert_eq!(kpss_test(&wn).unwrap().p_value, 0.10);
        let rw: Vec<f64> = wn
            .iter()
            .scan(0.0, |s, &e| {
                *s += e;
                Some(*s)
            })
            .collect();
        assert!(adf_test(&rw).unwrap().p_value > 0.10);
        assert_eq!(kpss_test(&rw).unwrap().p_value, 0.01);
        let ramp: Vec<f64> = (0..200).map(|t| t as f64 / 200.0).collect();
        assert_eq!(kpss_test(&ramp).unwrap().p_value, 0.01);
        assert!(adf_test(&wn[..9]).is_err());
    }

    #[test]
    fn p_value_tables() {
        assert_eq!(adf_p_value(-10.0, 100), 0.01);
        assert_eq!(adf_p_value(5.0, 100), 0.99);
        assert!((adf_p_value(-2.89, 100) - 0.05).abs() < 1e-12);
        assert!((kpss_p_value(0.463) - 0.05).abs() < 1e-12);
        assert_eq!(kpss_p_value(0.1), 0.10);
        assert_eq!(kpss_p_value(2.0), 0.01);
    }
}
