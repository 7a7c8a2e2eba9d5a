//! Sparse synthetic control estimation.
//!
//! The estimator chooses diagonal predictor weights V by minimizing the
//! validation-window fit plus an L1 penalty on V, where the donor weights are
//! the simplex-constrained minimizers of the V-weighted predictor mismatch.
//! Alongside it: the unpenalized cross-validated and fixed-V synthetic
//! controls, difference-in-differences, placebo-bootstrap variance, and a
//! linear factor model simulator for Monte Carlo studies.

pub mod error;
pub mod panel;
pub mod simulation;
pub mod estimators;
pub mod inference;
pub mod solvers;

pub use error::{Error, Result};
