//! Resampling bootstrap for a single regression coefficient.

use std::collections::BTreeMap;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::frame::PanelFrame;
use super::linalg::ColPivQr;
use super::ols::{build_design, ols_fe, sample_rows, RegressionSpec};
use super::percentile_interval;
use crate::seed::iteration_rng;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMode {
    /// Rows drawn independently with replacement.
    #[default]
    Rows,
    /// Whole countries drawn with replacement; each draw becomes its own
    /// fixed-effect level.
    CountryBlocks,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub iters: usize,
    pub seed: u64,
    pub level: f64,
    pub mode: ResampleMode,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        BootstrapOptions { iters: 10_000, seed: 42, level: 0.95, mode: ResampleMode::Rows }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCoef<T> {
    pub model: String,
    pub predictor: String,
    pub estimate: T,
    pub ci_low: T,
    pub ci_high: T,
    pub iters: usize,
    pub singular: usize,
    pub mode: ResampleMode,
    pub warning: Option<String>,
}

const WARN_SINGULAR_SHARE: f64 = 0.01;
const MAX_SINGULAR_SHARE: f64 = 0.5;

pub fn bootstrap_coef<T: Scalar>(
    frame: &PanelFrame<T>,
    spec: &RegressionSpec,
    predictor: &str,
    opts: &BootstrapOptions,
) -> Result<BootstrapCoef<T>> {
    let target = spec
        .predictors
        .iter()
        .position(|p| p == predictor)
        .ok_or_else(|| Error::Config(format!("model '{}' has no predictor '{predictor}'", spec.id)))?
        + 1;
    if opts.iters == 0 {
        return Err(Error::Config("bootstrap needs at least one iteration".into()));
    }
    let full = ols_fe(frame, spec)?;
    let rows = sample_rows(frame, spec)?;
    let base = frame.take_rows(&rows, |_, c| c.to_string());

    let mut blocks: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, c) in base.countries().iter().enumerate() {
        blocks.entry(c.as_str()).or_default().push(i);
    }
    let blocks: Vec<Vec<usize>> = blocks.into_values().collect();

    let key = format!("{}:{predictor}", spec.id);
    let draws: Vec<Option<T>> = (0..opts.iters)
        .into_par_iter()
        .map(|i| {
            let mut rng = iteration_rng(opts.seed, &key, i as u64);
            let resampled = match opts.mode {
                ResampleMode::Rows => {
                    let idx: Vec<usize> = (0..base.len()).map(|_| rng.random_range(0..base.len())).collect();
                    base.take_rows(&idx, |_, c| c.to_string())
                }
                ResampleMode::CountryBlocks => {
                    let mut idx = Vec::with_capacity(base.len());
                    let mut labels = Vec::with_capacity(base.len());
                    for draw in 0..blocks.len() {
                        let block = &blocks[rng.random_range(0..blocks.len())];
                        idx.extend_from_slice(block);
                        labels.extend(std::iter::repeat_n(draw, block.len()));
                    }
                    base.take_rows(&idx, |k, c| format!("{c}#{}", labels[k]))
                }
            };
            refit(&resampled, spec, target)
        })
        .collect::<Result<_>>()?;

    let mut kept: Vec<T> = draws.iter().flatten().copied().collect();
    let singular = opts.iters - kept.len();
    let share = singular as f64 / opts.iters as f64;
    if share > MAX_SINGULAR_SHARE {
        return Err(Error::InsufficientData(format!(
            "bootstrap for '{}' in model '{}': {singular} of {} resamples were not estimable",
            predictor, spec.id, opts.iters
        )));
    }
    let warning = (share > WARN_SINGULAR_SHARE).then(|| {
        let msg = format!("{singular} of {} resamples were not estimable and were skipped", opts.iters);
        tracing::warn!(model = %spec.id, "{msg}");
        msg
    });
    let (ci_low, ci_high) = percentile_interval(&mut kept, opts.level);
    Ok(BootstrapCoef {
        model: spec.id.clone(),
        predictor: predictor.to_string(),
        estimate: full.beta[target],
        ci_low,
        ci_high,
        iters: opts.iters,
        singular,
        mode: opts.mode,
        warning,
    })
}

/// Point estimate of one design column, or `None` when the resample cannot
/// identify the model.
fn refit<T: Scalar>(frame: &PanelFrame<T>, spec: &RegressionSpec, target: usize) -> Result<Option<T>> {
    let design = match build_design(frame, spec) {
        Ok(d) => d,
        Err(Error::InsufficientData(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    if design.x.rows() <= design.x.cols() {
        return Ok(None);
    }
    let qr = ColPivQr::new(&design.x);
    if !qr.is_full_rank() {
        return Ok(None);
    }
    Ok(Some(qr.solve(&design.y)?[target]))
}
