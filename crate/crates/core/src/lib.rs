//! Building blocks for measuring evidence-minus-intuition (EMI) orientation in
//! parliamentary speech and relating it to country-year governance indicators.
//!
//! The numeric kernels (`fusion`, `embedder` vector math, `panel` bootstrap and
//! the whole of `econ`) are generic over [`Scalar`], so they run on `f32` as
//! well as `f64`. Pipeline records are stored as `f64`; the aliases below name
//! the concrete instantiations the pipeline uses.

pub mod corpus;
pub mod econ;
pub mod embedder;
mod error;
pub mod fusion;
pub mod panel;
pub mod preprocess;
pub mod rater;
mod scalar;
pub mod seed;

pub use error::{Error, Result};
pub use scalar::Scalar;

/// Scalar type used by pipeline records and artifacts.
pub type Real = f64;

pub type Matrix = econ::linalg::Matrix<Real>;
pub type PanelFrame = econ::PanelFrame<Real>;
pub type RegressionResult = econ::RegressionResult<Real>;
pub type Coefficient = econ::Coefficient<Real>;
pub type DiagnosticsReport = econ::DiagnosticsReport<Real>;
pub type AucResult = econ::AucResult<Real>;
pub type CorrelationResult = econ::CorrelationResult<Real>;
pub type LrTest = econ::LrTest<Real>;
pub type UnitRootTest = econ::UnitRootTest<Real>;
