//! Upper-level search over predictor weights: penalized validation fit,
//! its hypergradient through the lower-level optimum, and the λ path.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::lower::{solve_quadratic, Quadratic};
use super::{solve_lower, DonorWeights, PredictorWeights, SolverOptions};
use crate::error::{Error, Result};
use crate::panel::DesignMatrices;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaPathEntry {
    pub lambda: f64,
    /// Rescaled so that the largest entry is one.
    pub v: PredictorWeights,
    /// The joint step's V before rescaling (anchor at one).
    pub v_raw: PredictorWeights,
    pub w: DonorWeights,
    pub val_mse: f64,
    pub zero_set: Vec<usize>,
}

/// `(1/T_val) ||y1_val - Y0_val w||^2`.
pub fn validation_mse(design: &DesignMatrices, w: &[f64]) -> f64 {
    let y0 = &design.y0_val;
    let n = design.y1_val.len();
    (0..n)
        .map(|t| {
            let fit: f64 = (0..y0.ncols()).map(|j| y0[(t, j)] * w[j]).sum();
            (design.y1_val[t] - fit).powi(2)
        })
        .sum::<f64>()
        / n as f64
}

/// Starting V: diagonal of the pseudo-inverse of the predictor Gram matrix
/// `X0 X0'` (K x K), clipped at zero, with the anchor set to one.
pub fn init_predictor_weights(design: &DesignMatrices, anchor: usize) -> Result<PredictorWeights> {
    PredictorWeights::anchored(gram_pinv_diagonal(&design.x0_train), anchor)
}

pub(crate) fn gram_pinv_diagonal(x0: &DMatrix<f64>) -> Vec<f64> {
    let gram = x0 * x0.transpose();
    let scale = gram.diagonal().iter().cloned().fold(0.0, f64::max);
    let eps = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let pinv = gram
        .svd(true, true)
        .pseudo_inverse(eps)
        .unwrap_or_else(|_| DMatrix::zeros(x0.nrows(), x0.nrows()));
    pinv.diagonal().iter().map(|d| d.max(0.0)).collect()
}

/// Divides by the largest entry. Zero entries stay exactly zero.
pub fn rescale_v(v: &PredictorWeights) -> Result<PredictorWeights> {
    let max = v.values().iter().cloned().fold(0.0, f64::max);
    if !(max > 0.0) {
        return Err(Error::AllZero);
    }
    let mut out = PredictorWeights::free(v.values().iter().map(|x| x / max).collect())?;
    out.set_meta(v.anchor(), true);
    Ok(out)
}

impl PredictorWeights {
    pub(crate) fn set_meta(&mut self, anchor: usize, rescaled: bool) {
        self.anchor = anchor;
        self.rescaled = rescaled;
    }
}

/// Gradient of `val_mse(w(v)) + λ sum_{k != anchor} v_k` with respect to `v`,
/// differentiating through the lower-level optimum on the support of `w`.
/// With `anchor = None` every entry is penalized. The anchor entry is zero.
pub fn hypergradient(
    design: &DesignMatrices,
    v: &PredictorWeights,
    w: &DonorWeights,
    lambda: f64,
    anchor: Option<usize>,
) -> Result<DVector<f64>> {
    if v.len() != design.num_predictors() || w.len() != design.num_donors() {
        return Err(Error::DimensionError(
            "weights do not match the design".into(),
        ));
    }
    let q = Quadratic::new(v.values(), &design.x1_train, &design.x0_train);
    let w = DVector::from_column_slice(w.values());
    Ok(DVector::from_vec(hypergrad(design, &q, &w, lambda, anchor)))
}

fn hypergrad(
    design: &DesignMatrices,
    q: &Quadratic,
    w: &DVector<f64>,
    lambda: f64,
    anchor: Option<usize>,
) -> Vec<f64> {
    let (x1, x0) = (&design.x1_train, &design.x0_train);
    let (k, j) = x0.shape();
    let tval = design.y1_val.len() as f64;
    let resid_val = &design.y1_val - &design.y0_val * w;
    let gw = design.y0_val.tr_mul(&resid_val) * (-2.0 / tval);

    let support: Vec<usize> = (0..j).filter(|&i| w[i] > 1e-12).collect();
    let s = support.len();
    // adjoint: [2 G_SS 1; 1' 0] [p; q] = [g_S; 0]
    let p: Vec<f64> = if s <= 1 {
        vec![0.0; s]
    } else {
        let mut m = DMatrix::zeros(s + 1, s + 1);
        let mut rhs = DVector::zeros(s + 1);
        for (a, &ja) in support.iter().enumerate() {
            for (b, &jb) in support.iter().enumerate() {
                m[(a, b)] = 2.0 * q.g[(ja, jb)];
            }
            m[(a, s)] = 1.0;
            m[(s, a)] = 1.0;
            rhs[a] = gw[ja];
        }
        let sol = m
            .clone()
            .lu()
            .solve(&rhs)
            .filter(|x| x.iter().all(|v| v.is_finite()))
            .or_else(|| m.svd(true, true).solve(&rhs, 1e-12).ok())
            .unwrap_or_else(|| DVector::zeros(s + 1));
        sol.iter().take(s).cloned().collect()
    };

    (0..k)
        .map(|kk| {
            if Some(kk) == anchor {
                return 0.0;
            }
            let r: f64 = (0..j).map(|i| x0[(kk, i)] * w[i]).sum::<f64>() - x1[kk];
            let px: f64 = support
                .iter()
                .zip(&p)
                .map(|(&ja, &pa)| pa * x0[(kk, ja)])
                .sum();
            -2.0 * r * px + lambda
        })
        .collect()
}

struct Evaluated {
    w: DVector<f64>,
    q: Quadratic,
    value: f64,
}

fn penalty(v: &[f64], anchor: Option<usize>) -> f64 {
    v.iter()
        .enumerate()
        .filter(|&(k, _)| Some(k) != anchor)
        .map(|(_, x)| x)
        .sum()
}

fn evaluate(
    design: &DesignMatrices,
    v: &[f64],
    start: &[f64],
    lambda: f64,
    anchor: Option<usize>,
    opts: &SolverOptions,
) -> Result<Evaluated> {
    let q = Quadratic::new(v, &design.x1_train, &design.x0_train);
    let (w, _) = solve_quadratic(&q, start, opts)?;
    let value = validation_mse(design, w.as_slice()) + lambda * penalty(v, anchor);
    Ok(Evaluated { w, q, value })
}

/// Projected-gradient descent on v with the lower problem re-solved at every
/// trial point. Returns the final v and w.
fn descend(
    design: &DesignMatrices,
    lambda: f64,
    anchor: Option<usize>,
    init: &[f64],
    opts: &SolverOptions,
) -> Result<(Vec<f64>, DVector<f64>)> {
    let k = init.len();
    let mut v = init.to_vec();
    if let Some(a) = anchor {
        v[a] = 1.0;
    }
    let j = design.num_donors();
    let mut cur = evaluate(design, &v, &vec![1.0 / j as f64; j], lambda, anchor, opts)?;
    let mut grad = hypergrad(design, &cur.q, &cur.w, lambda, anchor);

    let free = |kk: usize| Some(kk) != anchor;
    let gmax = (0..k)
        .filter(|&kk| free(kk))
        .map(|kk| grad[kk].abs())
        .fold(0.0, f64::max);
    if gmax == 0.0 {
        return Ok((v, cur.w));
    }
    let vmax = v.iter().cloned().fold(0.0, f64::max);
    let mut step = 0.1 * vmax.max(1.0) / gmax;
    let mut trial = vec![0.0; k];

    for _ in 0..opts.outer_max_iter {
        // Switching on a weight that sits at zero can make w(v) jump. If no
        // step along the full projected gradient is accepted, retry with
        // those weights held at zero.
        let mut accepted = None;
        for hold_zeros in [false, true] {
            if hold_zeros && !(0..k).any(|kk| free(kk) && v[kk] == 0.0 && grad[kk] < 0.0) {
                break;
            }
            // no coordinate moves further than the current scale of v
            let reach = (0..k)
                .filter(|&kk| free(kk))
                .map(|kk| grad[kk].abs())
                .fold(0.0, f64::max);
            let vscale = 1.0 + v.iter().cloned().fold(0.0, f64::max);
            let mut t = if reach > 0.0 { step.min(vscale / reach) } else { step };
            for _ in 0..40 {
                let mut moved = 0.0f64;
                let mut decrease = 0.0;
                for kk in 0..k {
                    trial[kk] = if free(kk) && !(hold_zeros && v[kk] == 0.0) {
                        (v[kk] - t * grad[kk]).max(0.0)
                    } else {
                        v[kk]
                    };
                    let dv = trial[kk] - v[kk];
                    moved = moved.max(dv.abs());
                    decrease += grad[kk] * dv;
                }
                if moved <= 1e-14 * vscale {
                    break;
                }
                if trial.iter().all(|&x| x == 0.0) {
                    t *= 0.5;
                    continue;
                }
                let next = evaluate(design, &trial, cur.w.as_slice(), lambda, anchor, opts)?;
                if next.value <= cur.value + 1e-4 * decrease {
                    accepted = Some((next, t));
                    break;
                }
                t *= 0.5;
            }
            if accepted.is_some() {
                break;
            }
        }
        let Some((next, taken)) = accepted else {
            break;
        };
        let improvement = (cur.value - next.value) / cur.value.abs().max(f64::MIN_POSITIVE);
        let next_grad = hypergrad(design, &next.q, &next.w, lambda, anchor);
        let (mut ss, mut sy) = (0.0, 0.0);
        for kk in (0..k).filter(|&kk| free(kk)) {
            let s = trial[kk] - v[kk];
            ss += s * s;
            sy += s * (next_grad[kk] - grad[kk]);
        }
        step = if sy > 0.0 {
            (ss / sy).clamp(1e-12, 1e12)
        } else {
            (taken * 4.0).min(1e12)
        };
        v.copy_from_slice(&trial);
        grad = next_grad;
        cur = next;
        if improvement < opts.outer_tol {
            break;
        }
    }
    Ok((v, cur.w))
}

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::DomainError(format!("λ must be finite and >= 0, got {lambda}")));
    }
    Ok(())
}

/// Approximately minimizes `val_mse(w(v)) + λ sum_{k != k0} v_k` subject to
/// `w(v)` solving the training lower problem, `v >= 0` and `v_{k0} = 1`.
/// The returned V is not rescaled.
pub fn joint_penalized_step(
    design: &DesignMatrices,
    lambda: f64,
    k0: usize,
    init: &PredictorWeights,
    opts: &SolverOptions,
) -> Result<(PredictorWeights, DonorWeights)> {
    check_lambda(lambda)?;
    let k = design.num_predictors();
    if k0 >= k {
        return Err(Error::InfeasibleAnchor { anchor: k0, k });
    }
    if init.len() != k {
        return Err(Error::DimensionError("initial V has wrong length".into()));
    }
    let (v, w) = descend(design, lambda, Some(k0), init.values(), opts)?;
    Ok((
        PredictorWeights::anchored(v, k0)?,
        DonorWeights::from_clean(w.as_slice().to_vec()),
    ))
}

/// The same descent without an anchor: every v_k is penalized and free.
/// Because the lower argmin is invariant to scaling v, this drives V toward
/// zero; it exists to exhibit why an anchor is required.
pub fn relaxed_penalized_step(
    design: &DesignMatrices,
    lambda: f64,
    init: &PredictorWeights,
    opts: &SolverOptions,
) -> Result<(PredictorWeights, DonorWeights)> {
    check_lambda(lambda)?;
    if init.len() != design.num_predictors() {
        return Err(Error::DimensionError("initial V has wrong length".into()));
    }
    let (v, w) = descend(design, lambda, None, init.values(), opts)?;
    Ok((
        PredictorWeights::free(v)?,
        DonorWeights::from_clean(w.as_slice().to_vec()),
    ))
}

fn path_entry(
    design: &DesignMatrices,
    lambda: f64,
    k0: usize,
    init: &PredictorWeights,
    opts: &SolverOptions,
) -> Result<LambdaPathEntry> {
    let (v_raw, _) = joint_penalized_step(design, lambda, k0, init, opts)?;
    let v = rescale_v(&v_raw)?;
    let sol = solve_lower(&v, &design.x1_train, &design.x0_train, opts)?;
    let val_mse = validation_mse(design, sol.w.values());
    Ok(LambdaPathEntry {
        lambda,
        zero_set: v.zero_set(opts.zero_threshold),
        v,
        v_raw,
        w: sol.w,
        val_mse,
    })
}

/// One entry per λ: joint step, rescale, refit on training data, validation
/// MSE. The first grid point starts from [`init_predictor_weights`].
pub fn lambda_path(
    design: &DesignMatrices,
    grid: &[f64],
    k0: usize,
    opts: &SolverOptions,
) -> Result<Vec<LambdaPathEntry>> {
    let init = init_predictor_weights(design, k0)?;
    lambda_path_from(design, grid, k0, &init, opts)
}

/// As [`lambda_path`] from an explicit starting V. Each grid point is warm
/// started from the previous point's unrescaled V.
pub fn lambda_path_from(
    design: &DesignMatrices,
    grid: &[f64],
    k0: usize,
    init: &PredictorWeights,
    opts: &SolverOptions,
) -> Result<Vec<LambdaPathEntry>> {
    if grid.is_empty() {
        return Err(Error::ConfigError("λ grid is empty".into()));
    }
    let mut start = init.clone();
    let mut path = Vec::with_capacity(grid.len());
    for &lambda in grid {
        let entry = path_entry(design, lambda, k0, &start, opts).map_err(|e| match e {
            e @ (Error::InfeasibleAnchor { .. } | Error::DimensionError(_)) => e,
            e => Error::LambdaFailed {
                lambda,
                source: Box::new(e),
            },
        })?;
        start = entry.v_raw.clone();
        path.push(entry);
    }
    Ok(path)
}
