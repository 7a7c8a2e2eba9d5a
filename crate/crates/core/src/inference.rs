//! Placebo-bootstrap variance of the ATT: re-run the estimator with a donor
//! in the treated role and use the spread of the placebo effects.

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::EstimatorConfig;
use crate::panel::PanelDataset;
use crate::simulation::replication_rng;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    #[default]
    WithReplacement,
    /// Distinct placebo units; needs `b <= J`.
    WithoutReplacement,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaceboOptions {
    pub b: usize,
    pub seed: u64,
    pub sampling: Sampling,
    /// Divide by `b - 1` instead of `b`.
    pub bias_corrected: bool,
}

impl Default for PlaceboOptions {
    fn default() -> Self {
        Self {
            b: 100,
            seed: 0,
            sampling: Sampling::default(),
            bias_corrected: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboDraw {
    pub draw: usize,
    pub unit: String,
    pub att: f64,
    /// Donor weights of the placebo fit, in the order of `donors`.
    pub weights: Vec<f64>,
    pub donors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceboResult {
    pub tau_draws: Vec<f64>,
    pub variance: f64,
    pub sd: f64,
    pub b: usize,
    pub bias_corrected: bool,
    pub per_draw: Vec<PlaceboDraw>,
}

/// Donor positions (0-based within the donor pool) for each draw.
fn placebo_units(j: usize, opts: &PlaceboOptions) -> Result<Vec<usize>> {
    match opts.sampling {
        Sampling::WithReplacement => Ok((0..opts.b)
            .map(|d| replication_rng(opts.seed, d as u64).random_range(0..j))
            .collect()),
        Sampling::WithoutReplacement => {
            if opts.b > j {
                return Err(Error::ConfigError(format!(
                    "sampling without replacement needs b <= J, got b = {} and J = {j}",
                    opts.b
                )));
            }
            let mut order: Vec<usize> = (0..j).collect();
            order.shuffle(&mut replication_rng(opts.seed, 0));
            order.truncate(opts.b);
            Ok(order)
        }
    }
}

/// `(1/B) sum (tau_b - mean)^2`, or with `B - 1` when `bias_corrected`.
pub fn placebo_variance_of(draws: &[f64], bias_corrected: bool) -> f64 {
    let b = draws.len() as f64;
    let mean = draws.iter().sum::<f64>() / b;
    let ss: f64 = draws.iter().map(|t| (t - mean).powi(2)).sum();
    ss / if bias_corrected { b - 1.0 } else { b }
}

/// For each draw, a donor (uniform over the pool) takes the treated role, the
/// remaining donors form its pool and the full estimator is re-run. The true
/// treated unit never enters a placebo fit.
pub fn placebo_variance(
    panel: &PanelDataset,
    estimator: &EstimatorConfig,
    opts: &PlaceboOptions,
) -> Result<PlaceboResult> {
    let j = panel.num_donors();
    if j < 3 {
        return Err(Error::InsufficientDonors { needed: 3, have: j });
    }
    if opts.b == 0 || (opts.bias_corrected && opts.b < 2) {
        return Err(Error::ConfigError(format!(
            "placebo b = {} is too small",
            opts.b
        )));
    }
    let units = placebo_units(j, opts)?;
    let per_draw = units
        .par_iter()
        .enumerate()
        .map(|(draw, &l)| {
            let keep: Vec<usize> = std::iter::once(l + 1)
                .chain((1..=j).filter(|&i| i != l + 1))
                .collect();
            let placebo = panel.subset_units(&keep)?;
            let (effect, fit) = estimator.run(&placebo).map_err(|e| Error::EstimatorError {
                draw,
                source: Box::new(e),
            })?;
            let weights = match fit {
                Some(f) => f.w_star.values().to_vec(),
                None => vec![1.0 / (j - 1) as f64; j - 1],
            };
            Ok(PlaceboDraw {
                draw,
                unit: placebo.treated_unit().to_string(),
                att: effect.att,
                weights,
                donors: placebo.donor_units().to_vec(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let tau_draws: Vec<f64> = per_draw.iter().map(|d| d.att).collect();
    let variance = placebo_variance_of(&tau_draws, opts.bias_corrected);
    Ok(PlaceboResult {
        sd: variance.sqrt(),
        variance,
        b: opts.b,
        bias_corrected: opts.bias_corrected,
        tau_draws,
        per_draw,
    })
}
