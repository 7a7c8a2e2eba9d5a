//! Optimization core: the simplex-constrained V-weighted matching problem,
//! its analytic gradients, and the penalized bi-level search over V.

mod lower;
mod simplex;
mod upper;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use lower::{
    kkt_residual, lower_grad_v, lower_grad_w, lower_objective, solve_lower, solve_lower_from,
    LowerSolution,
};
pub use simplex::project_simplex;
pub use upper::{
    hypergradient, init_predictor_weights, joint_penalized_step, lambda_path,
    lambda_path_from,
    relaxed_penalized_step, rescale_v, validation_mse, LambdaPathEntry,
};
pub(crate) use upper::gram_pinv_diagonal;

/// Diagonal of the predictor weighting matrix V.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorWeights {
    values: Vec<f64>,
    anchor: usize,
    rescaled: bool,
}

impl PredictorWeights {
    /// Anchored weights: `values[anchor]` is forced to one.
    pub fn anchored(mut values: Vec<f64>, anchor: usize) -> Result<Self> {
        if anchor >= values.len() {
            return Err(Error::InfeasibleAnchor {
                anchor,
                k: values.len(),
            });
        }
        check_nonneg(&values)?;
        values[anchor] = 1.0;
        Ok(Self {
            values,
            anchor,
            rescaled: false,
        })
    }

    /// Unanchored nonnegative weights; the anchor is recorded as the largest entry.
    pub fn free(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimensionError("empty predictor weights".into()));
        }
        check_nonneg(&values)?;
        let anchor = argmax(&values);
        Ok(Self {
            values,
            anchor,
            rescaled: false,
        })
    }

    pub fn uniform(k: usize) -> Self {
        Self {
            values: vec![1.0; k],
            anchor: 0,
            rescaled: false,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn is_rescaled(&self) -> bool {
        self.rescaled
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Multiplies every entry by `a > 0`.
    pub fn scaled(&self, a: f64) -> Self {
        Self {
            values: self.values.iter().map(|v| v * a).collect(),
            anchor: self.anchor,
            rescaled: false,
        }
    }

    /// Indices with weight at or below `threshold`, excluding the anchor.
    pub fn zero_set(&self, threshold: f64) -> Vec<usize> {
        self.values
            .iter()
            .enumerate()
            .filter(|&(k, &v)| k != self.anchor && v <= threshold)
            .map(|(k, _)| k)
            .collect()
    }
}

fn check_nonneg(values: &[f64]) -> Result<()> {
    if let Some(k) = values.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::DomainError(format!(
            "predictor weight {k} is {} (must be finite and >= 0)",
            values[k]
        )));
    }
    Ok(())
}

fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |(bi, bv), (i, &v)| {
            if v > bv {
                (i, v)
            } else {
                (bi, bv)
            }
        })
        .0
}

/// Donor weights on the unit simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DonorWeights {
    values: Vec<f64>,
}

impl DonorWeights {
    pub const SUM_TOL: f64 = 1e-10;

    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::DimensionError("empty donor weights".into()));
        }
        if values.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::DomainError("donor weights must be >= 0".into()));
        }
        let s: f64 = values.iter().sum();
        if (s - 1.0).abs() > Self::SUM_TOL {
            return Err(Error::DomainError(format!(
                "donor weights sum to {s}, not 1"
            )));
        }
        Ok(Self { values })
    }

    pub fn uniform(j: usize) -> Self {
        Self {
            values: vec![1.0 / j as f64; j],
        }
    }

    /// All weight on donor `j`.
    pub fn vertex(j: usize, n: usize) -> Self {
        let mut values = vec![0.0; n];
        values[j] = 1.0;
        Self { values }
    }

    pub(crate) fn from_clean(values: Vec<f64>) -> Self {
        debug_assert!((values.iter().sum::<f64>() - 1.0).abs() <= Self::SUM_TOL);
        Self { values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// How the λ grid is laid out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaGrid {
    /// Zero plus `points` log-spaced values in `[lo, hi]`, multiplied by the
    /// validation MSE of the unpenalized fit.
    Relative { points: usize, lo: f64, hi: f64 },
    /// Absolute λ values, used as given.
    Explicit(Vec<f64>),
}

impl Default for LambdaGrid {
    fn default() -> Self {
        LambdaGrid::Relative {
            points: 20,
            lo: 1e-4,
            hi: 1e1,
        }
    }
}

impl LambdaGrid {
    pub fn needs_scale(&self) -> bool {
        matches!(self, LambdaGrid::Relative { .. })
    }

    pub fn resolve(&self, scale: f64) -> Result<Vec<f64>> {
        let grid = match self {
            LambdaGrid::Relative { points, lo, hi } => {
                if !(*lo > 0.0 && hi >= lo) {
                    return Err(Error::ConfigError(format!(
                        "relative grid needs 0 < lo <= hi, got [{lo}, {hi}]"
                    )));
                }
                let mut g = vec![0.0];
                let (a, b) = (lo.ln(), hi.ln());
                for i in 0..*points {
                    let t = if *points == 1 {
                        0.0
                    } else {
                        i as f64 / (*points - 1) as f64
                    };
                    g.push(scale * (a + t * (b - a)).exp());
                }
                g
            }
            LambdaGrid::Explicit(g) => g.clone(),
        };
        if grid.is_empty() || grid.iter().any(|l| !l.is_finite() || *l < 0.0) {
            return Err(Error::ConfigError(
                "λ grid must be nonempty with finite values >= 0".into(),
            ));
        }
        Ok(grid)
    }
}

/// How the anchor predictor k0 is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorPolicy {
    /// Try every predictor as anchor; keep the one with the lowest validation MSE.
    Search,
    Fixed(usize),
    /// The last predictor row (the most recent outcome lag for specs built
    /// with [`crate::panel::PredictorSpec::with_last_lags`]).
    Last,
}

impl Default for AnchorPolicy {
    fn default() -> Self {
        AnchorPolicy::Search
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    /// Lower solver stops when the scaled projected-gradient step is below this.
    pub lower_tol: f64,
    pub lower_max_iter: usize,
    /// Maximum accepted KKT residual of a lower-level solution.
    pub kkt_tol: f64,
    /// Relative improvement of the composite objective that ends the V search.
    pub outer_tol: f64,
    pub outer_max_iter: usize,
    /// v_k at or below this (after rescaling) counts as zero.
    pub zero_threshold: f64,
    pub grid: LambdaGrid,
    pub anchor: AnchorPolicy,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            lower_tol: 1e-8,
            lower_max_iter: 10_000,
            kkt_tol: 1e-6,
            outer_tol: 1e-9,
            outer_max_iter: 300,
            zero_threshold: 1e-8,
            grid: LambdaGrid::default(),
            anchor: AnchorPolicy::default(),
        }
    }
}
