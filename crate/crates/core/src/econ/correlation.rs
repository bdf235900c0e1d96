//! Pearson correlation with a Fisher-z confidence interval.

use serde::{Deserialize, Serialize};

use super::dist;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult<T> {
    pub r: T,
    pub ci_low: T,
    pub ci_high: T,
    pub p_value: T,
    pub n: usize,
}

/// Interval for a correlation `r` observed on `n` pairs.
pub fn fisher_ci<T: Scalar>(r: T, n: usize, level: f64) -> Result<(T, T)> {
    if n < 4 {
        return Err(Error::InsufficientData(format!("Fisher interval needs n >= 4, got {n}")));
    }
    if r >= T::one() {
        return Ok((T::one(), T::one()));
    }
    if r <= -T::one() {
        return Ok((-T::one(), -T::one()));
    }
    let z = r.atanh();
    let se = T::one() / T::from_usize_lossy(n - 3).sqrt();
    let q = T::lit(dist::normal_quantile(0.5 + level / 2.0));
    Ok(((z - q * se).tanh(), (z + q * se).tanh()))
}

pub fn pearson_r_ci<T: Scalar>(x: &[T], y: &[T], level: f64) -> Result<CorrelationResult<T>> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), actual: y.len() });
    }
    let n = x.len();
    if n < 4 {
        return Err(Error::InsufficientData(format!("correlation needs n >= 4, got {n}")));
    }
    let nt = T::from_usize_lossy(n);
    let mx = x.iter().copied().sum::<T>() / nt;
    let my = y.iter().copied().sum::<T>() / nt;
    let (mut sxy, mut sxx, mut syy) = (T::zero(), T::zero(), T::zero());
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy = sxy + dx * dy;
        sxx = sxx + dx * dx;
        syy = syy + dy * dy;
    }
    if !(sxx > T::zero()) || !(syy > T::zero()) {
        return Err(Error::ZeroVariance("correlation input has zero variance".into()));
    }
    let r = (sxy / (sxx.sqrt() * syy.sqrt())).max(-T::one()).min(T::one());
    let (ci_low, ci_high) = fisher_ci(r, n, level)?;
    let df = (n - 2) as f64;
    let rf = r.as_f64();
    let p = if rf.abs() >= 1.0 { 0.0 } else { dist::t_two_sided_p(rf * df.sqrt() / (1.0 - rf * rf).sqrt(), df) };
    Ok(CorrelationResult { r, ci_low, ci_high, p_value: T::lit(p), n })
}
