//! Panel statistics: fixed-effects OLS, diagnostics, correlation, model
//! comparison, bootstrap inference and ROC analysis.

pub mod bootstrap;
pub mod compare;
pub mod correlation;
pub mod diagnostics;
pub mod dist;
mod frame;
pub mod linalg;
pub mod ols;
pub mod roc;

pub use bootstrap::{bootstrap_coef, BootstrapCoef, BootstrapOptions, ResampleMode};
pub use compare::{lr_compare, LrTest};
pub use correlation::{fisher_ci, pearson_r_ci, CorrelationResult};
pub use diagnostics::{adf_test, diagnostics, jarque_bera, kpss_test, vif, DiagnosticsReport, JarqueBera, UnitRootTest};
pub use frame::PanelFrame;
pub use ols::{ols_fe, Coefficient, FixedEffects, RegressionResult, RegressionSpec};
pub use roc::{
    auc, delong_compare, load_annotations, validate_emi, Annotation, AucResult, DelongTest, MethodAuc, ValidationReport,
};

use crate::Scalar;

/// Sample quantile with linear interpolation between order statistics
/// (the "type 7" rule). `sorted` must be ascending and non-empty.
pub fn quantile_sorted<T: Scalar>(sorted: &[T], q: f64) -> T {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    let frac = T::lit(h - lo as f64);
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Percentile interval `[(1-level)/2, (1+level)/2]` of an unsorted sample.
pub fn percentile_interval<T: Scalar>(values: &mut [T], level: f64) -> (T, T) {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite bootstrap statistic"));
    let alpha = (1.0 - level) / 2.0;
    (quantile_sorted(values, alpha), quantile_sorted(values, 1.0 - alpha))
}
