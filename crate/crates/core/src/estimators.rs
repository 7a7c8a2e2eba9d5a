//! End-to-end estimators and treatment-effect extraction.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{build_design, DesignMatrices, PanelDataset, PredictorSpec};
use crate::solvers::{
    lambda_path, lambda_path_from, rescale_v, solve_lower, AnchorPolicy, DonorWeights,
    LambdaGrid, LambdaPathEntry, PredictorWeights, SolverOptions,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Mean squared gap between treated and synthetic outcomes over `t <= T0`.
    pub pre_mse: f64,
    pub pre_mad: f64,
    pub val_mse: f64,
    pub zero_set: Vec<usize>,
    /// `|x1_k - x0_k . w*|` on the final (shifted) design.
    pub predictor_residuals: Vec<f64>,
    /// Predictors constant across donors in the training window.
    pub constant_predictors: Vec<usize>,
    /// The final lower-level problem has a flat direction on its active face.
    pub non_unique: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseScFit {
    pub v_star: PredictorWeights,
    pub w_star: DonorWeights,
    pub lambda_star: f64,
    pub path: Vec<LambdaPathEntry>,
    pub anchor_used: usize,
    pub predictor_names: Vec<String>,
    pub donor_units: Vec<String>,
    pub diagnostics: FitDiagnostics,
}

impl SparseScFit {
    /// Number of predictors with weight above the zero threshold.
    pub fn k_used(&self, threshold: f64) -> usize {
        self.v_star.values().iter().filter(|&&v| v > threshold).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectEstimate {
    pub method: String,
    /// `Y_1t - Yhat_1t` for `t > T0`.
    pub tau_series: Vec<f64>,
    pub att: f64,
    /// Synthetic outcome for every period.
    pub counterfactual: Vec<f64>,
    pub k_used: Option<usize>,
}

/// Counterfactual `Y0 w` for every period, gaps and their post-period mean.
pub fn estimate_effect(
    panel: &PanelDataset,
    w: &DonorWeights,
    method: &str,
    k_used: Option<usize>,
) -> Result<EffectEstimate> {
    if w.len() != panel.num_donors() {
        return Err(Error::DimensionError(format!(
            "{} weights for {} donors",
            w.len(),
            panel.num_donors()
        )));
    }
    let y0 = panel.donor_outcomes();
    let counterfactual = &y0 * DVector::from_column_slice(w.values());
    let y1 = panel.treated_outcomes();
    let tau_series: Vec<f64> = (panel.t0()..panel.num_periods())
        .map(|t| y1[t] - counterfactual[t])
        .collect();
    let att = tau_series.iter().sum::<f64>() / tau_series.len() as f64;
    Ok(EffectEstimate {
        method: method.to_string(),
        tau_series,
        att,
        counterfactual: counterfactual.iter().cloned().collect(),
        k_used,
    })
}

/// Two-way difference-in-differences with uniform donor weights and the full
/// pre-period as baseline.
pub fn fit_did(panel: &PanelDataset) -> Result<EffectEstimate> {
    let y = panel.outcomes();
    let (n, t0, t) = (y.nrows(), panel.t0(), panel.num_periods());
    let j = (n - 1) as f64;
    let pre_mean = |i: usize| (0..t0).map(|s| y[(i, s)]).sum::<f64>() / t0 as f64;
    let treated_base = pre_mean(0);
    let donor_base = (1..n).map(pre_mean).sum::<f64>() / j;
    let donor_mean = |s: usize| (1..n).map(|i| y[(i, s)]).sum::<f64>() / j;
    let counterfactual: Vec<f64> = (0..t)
        .map(|s| treated_base + donor_mean(s) - donor_base)
        .collect();
    let tau_series: Vec<f64> = (t0..t).map(|s| y[(0, s)] - counterfactual[s]).collect();
    let att = tau_series.iter().sum::<f64>() / tau_series.len() as f64;
    Ok(EffectEstimate {
        method: "did".into(),
        tau_series,
        att,
        counterfactual,
        k_used: None,
    })
}

/// Fits on the donors sorted by their data, then maps the weights back to the
/// caller's order. The V search is nonconvex, so rounding differences from a
/// reordered pool could otherwise end in a different local solution.
fn in_canonical_order(
    panel: &PanelDataset,
    fit: impl FnOnce(&PanelDataset) -> Result<SparseScFit>,
) -> Result<SparseScFit> {
    let order = canonical_donor_order(panel);
    if order.iter().enumerate().all(|(i, &d)| i == d) {
        return fit(panel);
    }
    let keep: Vec<usize> = std::iter::once(0).chain(order.iter().map(|d| d + 1)).collect();
    let mut out = fit(&panel.subset_units(&keep)?)?;
    let restore = |w: &DonorWeights| {
        let mut values = vec![0.0; order.len()];
        for (pos, &d) in order.iter().enumerate() {
            values[d] = w.values()[pos];
        }
        DonorWeights::from_clean(values)
    };
    out.w_star = restore(&out.w_star);
    for entry in &mut out.path {
        entry.w = restore(&entry.w);
    }
    out.donor_units = panel.donor_units().to_vec();
    Ok(out)
}

/// Donor indices sorted by outcome series, then predictor values, then label.
fn canonical_donor_order(panel: &PanelDataset) -> Vec<usize> {
    let key = |d: usize| -> Vec<f64> {
        let mut k: Vec<f64> = panel.outcomes().row(d + 1).iter().copied().collect();
        for m in panel.predictors().values() {
            k.extend(m.row(d + 1).iter());
        }
        k
    };
    let keys: Vec<Vec<f64>> = (0..panel.num_donors()).map(key).collect();
    let labels = panel.donor_units();
    let mut order: Vec<usize> = (0..keys.len()).collect();
    order.sort_by(|&a, &b| {
        keys[a]
            .iter()
            .zip(&keys[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| labels[a].cmp(&labels[b]))
    });
    order
}

fn anchors(policy: AnchorPolicy, k: usize) -> Result<Vec<usize>> {
    match policy {
        AnchorPolicy::Search => Ok((0..k).collect()),
        AnchorPolicy::Last => Ok(vec![k - 1]),
        AnchorPolicy::Fixed(a) if a < k => Ok(vec![a]),
        AnchorPolicy::Fixed(a) => Err(Error::InfeasibleAnchor { anchor: a, k }),
    }
}

/// λ path for one anchor. A relative grid is scaled by the validation MSE of
/// the unpenalized fit divided by its total non-anchor V mass, so that the
/// penalty at the unpenalized V equals the grid multiple of the validation MSE.
fn path_for_anchor(
    design: &DesignMatrices,
    anchor: usize,
    opts: &SolverOptions,
) -> Result<Vec<LambdaPathEntry>> {
    if !opts.grid.needs_scale() {
        return lambda_path(design, &opts.grid.resolve(1.0)?, anchor, opts);
    }
    let mut path = lambda_path(design, &[0.0], anchor, opts)?;
    let grid = opts.grid.resolve(grid_scale(design, &path[0], anchor))?;
    let start = path[0].v_raw.clone();
    path.extend(lambda_path_from(design, &grid[1..], anchor, &start, opts)?);
    Ok(path)
}

fn grid_scale(design: &DesignMatrices, unpenalized: &LambdaPathEntry, anchor: usize) -> f64 {
    let n = design.y1_val.len() as f64;
    let floor = 1e-12 * (1.0 + design.y1_val.iter().map(|y| y * y).sum::<f64>() / n);
    let mass: f64 = unpenalized
        .v_raw
        .values()
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != anchor)
        .map(|(_, v)| v)
        .sum();
    let val = unpenalized.val_mse.max(floor);
    if mass > 0.0 {
        val / mass
    } else {
        val
    }
}

fn best_entry(path: &[LambdaPathEntry]) -> usize {
    let mut best = 0;
    for (i, e) in path.iter().enumerate() {
        if e.val_mse < path[best].val_mse {
            best = i;
        }
    }
    best
}

fn finish_fit(
    panel: &PanelDataset,
    train: &DesignMatrices,
    shifted: &DesignMatrices,
    v_star: PredictorWeights,
    lambda_star: f64,
    path: Vec<LambdaPathEntry>,
    val_mse: f64,
    opts: &SolverOptions,
) -> Result<SparseScFit> {
    let sol = solve_lower(&v_star, &shifted.x1_train, &shifted.x0_train, opts)?;
    let w = sol.w.values();
    let x0w = &shifted.x0_train * DVector::from_column_slice(w);
    let predictor_residuals = (0..shifted.num_predictors())
        .map(|k| (shifted.x1_train[k] - x0w[k]).abs())
        .collect();
    let y1 = panel.treated_outcomes();
    let synth = panel.donor_outcomes() * DVector::from_column_slice(w);
    let t0 = panel.t0();
    let gaps: Vec<f64> = (0..t0).map(|t| y1[t] - synth[t]).collect();
    let diagnostics = FitDiagnostics {
        pre_mse: gaps.iter().map(|g| g * g).sum::<f64>() / t0 as f64,
        pre_mad: gaps.iter().map(|g| g.abs()).sum::<f64>() / t0 as f64,
        val_mse,
        zero_set: v_star.zero_set(opts.zero_threshold),
        predictor_residuals,
        constant_predictors: train.constant_rows.clone(),
        non_unique: sol.non_unique,
    };
    Ok(SparseScFit {
        anchor_used: v_star.anchor(),
        v_star,
        w_star: sol.w,
        lambda_star,
        path,
        predictor_names: train.predictor_names.clone(),
        donor_units: panel.donor_units().to_vec(),
        diagnostics,
    })
}

/// Sparse synthetic control: anchor selection, λ path on the training design,
/// λ* by validation MSE, and a final donor-weight fit with V* on the design
/// shifted to the periods immediately before treatment.
pub fn fit_sparse_sc(
    panel: &PanelDataset,
    spec: &PredictorSpec,
    opts: &SolverOptions,
) -> Result<SparseScFit> {
    in_canonical_order(panel, |p| sparse_pipeline(p, spec, opts))
}

fn sparse_pipeline(
    panel: &PanelDataset,
    spec: &PredictorSpec,
    opts: &SolverOptions,
) -> Result<SparseScFit> {
    let train = build_design(panel, spec, false)?;
    let shifted = build_design(panel, spec, true)?;
    let mut best: Option<(Vec<LambdaPathEntry>, usize)> = None;
    for anchor in anchors(opts.anchor, train.num_predictors())? {
        let path = path_for_anchor(&train, anchor, opts)?;
        let i = best_entry(&path);
        let better = match &best {
            None => true,
            Some((p, b)) => path[i].val_mse < p[*b].val_mse,
        };
        if better {
            best = Some((path, i));
        }
    }
    let (path, i) = best.expect("at least one anchor");
    let chosen = &path[i];
    let (v_star, lambda_star, val_mse) = (chosen.v.clone(), chosen.lambda, chosen.val_mse);
    finish_fit(
        panel,
        &train,
        &shifted,
        v_star,
        lambda_star,
        path,
        val_mse,
        opts,
    )
}

/// Unpenalized cross-validated synthetic control: the sparse pipeline with λ = 0.
pub fn fit_scm_cv(
    panel: &PanelDataset,
    spec: &PredictorSpec,
    opts: &SolverOptions,
) -> Result<SparseScFit> {
    let opts = SolverOptions {
        grid: LambdaGrid::Explicit(vec![0.0]),
        ..opts.clone()
    };
    fit_sparse_sc(panel, spec, &opts)
}

/// Synthetic control with V fixed to the clipped diagonal of the pseudo-inverse
/// of the training predictor Gram matrix, rescaled to a maximum of one.
pub fn fit_scm_fixed_v(
    panel: &PanelDataset,
    spec: &PredictorSpec,
    opts: &SolverOptions,
) -> Result<SparseScFit> {
    in_canonical_order(panel, |p| fixed_v_pipeline(p, spec, opts))
}

fn fixed_v_pipeline(
    panel: &PanelDataset,
    spec: &PredictorSpec,
    opts: &SolverOptions,
) -> Result<SparseScFit> {
    let train = build_design(panel, spec, false)?;
    let shifted = build_design(panel, spec, true)?;
    let diag = PredictorWeights::free(crate::solvers::gram_pinv_diagonal(&train.x0_train))?;
    let v = match rescale_v(&diag) {
        Ok(v) => v,
        Err(Error::AllZero) => {
            return Err(Error::DegenerateDesign(
                "predictor Gram pseudo-inverse has no positive diagonal".into(),
            ))
        }
        Err(e) => return Err(e),
    };
    let sol = solve_lower(&v, &train.x1_train, &train.x0_train, opts)?;
    let val_mse = crate::solvers::validation_mse(&train, sol.w.values());
    finish_fit(panel, &train, &shifted, v, 0.0, Vec::new(), val_mse, opts)
}

/// Which estimator to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Did,
    /// Fixed-V synthetic control.
    Scm,
    /// Unpenalized cross-validated synthetic control (λ = 0).
    ScmCv,
    Sparse,
}

impl Method {
    pub fn label(&self) -> &'static str {
        match self {
            Method::Did => "did",
            Method::Scm => "scm",
            Method::ScmCv => "scm_cv",
            Method::Sparse => "sparse",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "did" => Ok(Method::Did),
            "scm" => Ok(Method::Scm),
            "scm_cv" => Ok(Method::ScmCv),
            "sparse" => Ok(Method::Sparse),
            other => Err(Error::ConfigError(format!("unknown estimator '{other}'"))),
        }
    }
}

/// An estimator together with its predictor spec and solver options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub method: Method,
    pub spec: PredictorSpec,
    pub solver: SolverOptions,
}

impl EstimatorConfig {
    pub fn new(method: Method, spec: PredictorSpec, solver: SolverOptions) -> Self {
        Self {
            method,
            spec,
            solver,
        }
    }

    /// Fits the estimator. Synthetic-control methods also return the fit.
    pub fn run(&self, panel: &PanelDataset) -> Result<(EffectEstimate, Option<SparseScFit>)> {
        let fit = match self.method {
            Method::Did => return Ok((fit_did(panel)?, None)),
            Method::Scm => fit_scm_fixed_v(panel, &self.spec, &self.solver)?,
            Method::ScmCv => fit_scm_cv(panel, &self.spec, &self.solver)?,
            Method::Sparse => fit_sparse_sc(panel, &self.spec, &self.solver)?,
        };
        let k_used = fit.k_used(self.solver.zero_threshold);
        let effect = estimate_effect(panel, &fit.w_star, self.method.label(), Some(k_used))?;
        Ok((effect, Some(fit)))
    }
}
