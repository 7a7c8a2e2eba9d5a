//! Linear factor model simulator and the Monte Carlo study runner.
//!
//! Outcomes follow `Y_it = delta + theta_t Z1_i + lambda_t mu_i + eps_it`.
//! Only the first `k1` covariates (the useful ones) enter the outcome; the
//! remaining `k2` are nuisance draws from the same distribution. The treated
//! unit's useful covariates are the average of donors 1 and 2 and it shares
//! their factor group, so `w = (1/2, 1/2, 0, ...)` replicates it up to noise.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{EstimatorConfig, Method};
use crate::panel::{PanelDataset, PredictorSpec};
use crate::solvers::{DonorWeights, SolverOptions};

/// Coefficients of the useful covariates in the outcome equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Theta {
    Constant(f64),
    /// One row per period, one column per useful covariate.
    PerPeriod(Vec<Vec<f64>>),
}

impl Default for Theta {
    fn default() -> Self {
        Theta::Constant(1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FactorModelConfig {
    pub j_plus_1: usize,
    pub t_total: usize,
    pub t0: usize,
    pub tv: usize,
    pub k1: usize,
    pub k2: usize,
    /// Outcome lags added to the study design, taken from the end of the
    /// training window.
    pub n_lags: usize,
    pub f: usize,
    pub group_size: usize,
    pub rho: f64,
    pub sigma_eps: f64,
    pub delta: f64,
    pub theta: Theta,
    /// Loading of each unit on its group's factor.
    pub loading: f64,
    /// SD of Gaussian noise added to the treated unit's useful covariates.
    pub sigma_z: f64,
    pub seed: u64,
}

impl Default for FactorModelConfig {
    fn default() -> Self {
        Self {
            j_plus_1: 21,
            t_total: 30,
            t0: 20,
            tv: 10,
            k1: 5,
            k2: 5,
            n_lags: 10,
            f: 7,
            group_size: 3,
            rho: 0.5,
            sigma_eps: 0.25,
            delta: 100.0,
            theta: Theta::default(),
            loading: 1.0,
            sigma_z: 0.0,
            seed: 0,
        }
    }
}

impl FactorModelConfig {
    /// The design with `t0` pre-periods, ten post-periods and half the
    /// pre-period for training.
    pub fn with_t0(mut self, t0: usize) -> Self {
        self.t0 = t0;
        self.tv = t0 / 2;
        self.t_total = t0 + 10;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::ConfigError(m));
        if self.j_plus_1 < 3 {
            return bad(format!("j_plus_1 = {} (need at least 3 units)", self.j_plus_1));
        }
        if !(1 <= self.tv && self.tv < self.t0 && self.t0 < self.t_total) {
            return bad(format!(
                "need 1 <= tv < t0 < t_total, got tv={}, t0={}, t_total={}",
                self.tv, self.t0, self.t_total
            ));
        }
        if self.k1 + self.k2 + self.n_lags == 0 {
            return bad("the study design needs at least one predictor".into());
        }
        if self.n_lags > self.tv {
            return bad(format!(
                "n_lags = {} exceeds the {}-period training window",
                self.n_lags, self.tv
            ));
        }
        if self.f == 0 || self.group_size == 0 {
            return bad("f and group_size must be positive".into());
        }
        if self.f * self.group_size < self.j_plus_1 {
            return bad(format!(
                "{} factors in groups of {} cover only {} of {} units",
                self.f,
                self.group_size,
                self.f * self.group_size,
                self.j_plus_1
            ));
        }
        if !(self.rho.abs() < 1.0) {
            return bad(format!(
                "rho = {} is not covariance-stationary (need |rho| < 1)",
                self.rho
            ));
        }
        for (name, s) in [("sigma_eps", self.sigma_eps), ("sigma_z", self.sigma_z)] {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(format!("{name} = {s} must be finite and >= 0"));
            }
        }
        if !self.delta.is_finite() || !self.loading.is_finite() {
            return bad("delta and loading must be finite".into());
        }
        match &self.theta {
            Theta::Constant(c) if !c.is_finite() => bad("theta must be finite".into()),
            Theta::PerPeriod(rows)
                if rows.len() != self.t_total
                    || rows
                        .iter()
                        .any(|r| r.len() != self.k1 || r.iter().any(|x| !x.is_finite())) =>
            {
                bad(format!(
                    "theta must be {} x {} with finite entries",
                    self.t_total, self.k1
                ))
            }
            _ => Ok(()),
        }
    }

    fn theta_matrix(&self) -> DMatrix<f64> {
        match &self.theta {
            Theta::Constant(c) => DMatrix::from_element(self.t_total, self.k1, *c),
            Theta::PerPeriod(rows) => {
                DMatrix::from_fn(self.t_total, self.k1, |t, k| rows[t][k])
            }
        }
    }

    pub fn covariate_names(&self) -> Vec<String> {
        (1..=self.k1)
            .map(|k| format!("z1_{k}"))
            .chain((1..=self.k2).map(|k| format!("z2_{k}")))
            .collect()
    }

    /// Useful covariates, nuisance covariates, then `n_lags` outcome lags
    /// ending with the most recent training period.
    pub fn predictor_spec(&self) -> PredictorSpec {
        PredictorSpec::with_last_lags(self.covariate_names(), self.n_lags)
    }
}

/// What the simulator knows and the estimators do not.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    /// `(J+1) x F`, treated unit first.
    pub loadings: DMatrix<f64>,
    /// `T x F`.
    pub factors: DMatrix<f64>,
    /// `T x k1`.
    pub theta: DMatrix<f64>,
    /// `(J+1) x (k1 + k2)` raw covariates.
    pub z: DMatrix<f64>,
    /// Predictor-row indices of the useful covariates in the study design.
    pub useful: Vec<usize>,
    pub nuisance: Vec<usize>,
    pub oracle_w: DonorWeights,
    pub effect: f64,
    pub sigma_eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPanel {
    pub panel: PanelDataset,
    pub truth: Truth,
}

/// RNG for replication `rep` of a study seeded with `seed`.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Draws one panel from the factor model using `cfg.seed`.
pub fn simulate_panel(cfg: &FactorModelConfig) -> Result<SimulatedPanel> {
    simulate_with(cfg, &mut replication_rng(cfg.seed, 0))
}

pub fn simulate_with(cfg: &FactorModelConfig, rng: &mut impl Rng) -> Result<SimulatedPanel> {
    cfg.validate()?;
    let (n, t, f) = (cfg.j_plus_1, cfg.t_total, cfg.f);
    let kz = cfg.k1 + cfg.k2;

    let mut z = DMatrix::from_fn(n, kz, |_, _| rng.random::<f64>());
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    for k in 0..cfg.k1 {
        z[(0, k)] = 0.5 * (z[(1, k)] + z[(2, k)]) + cfg.sigma_z * std_normal.sample(rng);
    }

    let loadings = DMatrix::from_fn(n, f, |i, g| {
        if i / cfg.group_size == g {
            cfg.loading
        } else {
            0.0
        }
    });

    let innov = (1.0 - cfg.rho * cfg.rho).sqrt();
    let mut factors = DMatrix::zeros(t, f);
    for g in 0..f {
        // stationary start: N(0, 1/(1 - rho^2))
        let mut prev = std_normal.sample(rng) / innov;
        for s in 0..t {
            prev = cfg.rho * prev + std_normal.sample(rng);
            factors[(s, g)] = prev;
        }
    }

    let theta = cfg.theta_matrix();
    let noise = Normal::new(0.0, cfg.sigma_eps).map_err(|e| Error::ConfigError(e.to_string()))?;
    let common = &factors * loadings.transpose();
    let mut y = DMatrix::zeros(n, t);
    for i in 0..n {
        for s in 0..t {
            let signal: f64 = (0..cfg.k1).map(|k| theta[(s, k)] * z[(i, k)]).sum();
            y[(i, s)] = cfg.delta + signal + common[(s, i)] + noise.sample(rng);
        }
    }

    let mut predictors = BTreeMap::new();
    for (k, name) in cfg.covariate_names().into_iter().enumerate() {
        predictors.insert(name, DMatrix::from_fn(n, t, |i, _| z[(i, k)]));
    }
    let units = (1..=n).map(|i| format!("unit{i:02}")).collect();
    let times = (1..=t).map(|s| s.to_string()).collect();
    let panel = PanelDataset::new(units, times, y, predictors, 0, cfg.t0, cfg.tv)?;

    let mut oracle = vec![0.0; n - 1];
    oracle[0] = 0.5;
    oracle[1] = 0.5;
    Ok(SimulatedPanel {
        panel,
        truth: Truth {
            loadings,
            factors,
            theta,
            z,
            useful: (0..cfg.k1).collect(),
            nuisance: (cfg.k1..kz).collect(),
            oracle_w: DonorWeights::new(oracle)?,
            effect: 0.0,
            sigma_eps: cfg.sigma_eps,
        },
    })
}

/// Mean absolute deviation `(1/n) sum |a_i - b_i|`.
pub fn mad(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(Error::DimensionError(format!(
            "mad needs equal nonempty lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasBound {
    pub bound: f64,
    /// `lambda_bar^2 F / xi_min`.
    pub gamma: f64,
    /// The omitted `O(1/T0)` remainder, reported as `1/T0`.
    pub remainder: f64,
}

/// Realized bias bound for donor weights `w`: `gamma/T0 * sum_{t<=T0} |Y gap|`
/// plus `|theta_bar (1 - gamma/T0)| * sum_{useful k} |Z gap|`.
pub fn bias_bound_oracle(sim: &SimulatedPanel, w: &DonorWeights) -> Result<BiasBound> {
    let panel = &sim.panel;
    let truth = &sim.truth;
    if w.len() != panel.num_donors() {
        return Err(Error::DimensionError(format!(
            "{} weights for {} donors",
            w.len(),
            panel.num_donors()
        )));
    }
    let t0 = panel.t0();
    let f = truth.factors.ncols();
    let pre = truth.factors.rows(0, t0);
    let gram = pre.transpose() * pre;
    let xi = SymmetricEigen::new(gram).eigenvalues.min();
    if !(xi >= 1e-12) {
        return Err(Error::SingularFactorGram(xi));
    }
    let lambda_bar = truth.factors.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let gamma = lambda_bar * lambda_bar * f as f64 / xi;
    let theta_bar = truth.theta.iter().fold(0.0f64, |m, x| m.max(x.abs()));

    let wv = DVector::from_column_slice(w.values());
    let synth = panel.donor_outcomes() * &wv;
    let y1 = panel.treated_outcomes();
    let y_gap: f64 = (0..t0).map(|s| (y1[s] - synth[s]).abs()).sum();
    let z_gap: f64 = truth
        .useful
        .iter()
        .map(|&k| {
            let fit: f64 = (0..w.len()).map(|j| truth.z[(j + 1, k)] * wv[j]).sum();
            (truth.z[(0, k)] - fit).abs()
        })
        .sum();
    let ratio = gamma / t0 as f64;
    Ok(BiasBound {
        bound: ratio * y_gap + (theta_bar * (1.0 - ratio)).abs() * z_gap,
        gamma,
        remainder: 1.0 / t0 as f64,
    })
}

/// Envelope rates for the predictor-match MSE: `sigma_z sqrt(k1)/k sqrt(2 ln J)`
/// for the sparse fit and `sigma_z sqrt(2 ln J / k)` for the standard one.
pub fn mse_rate_oracle(k: usize, k1: usize, j: usize, sigma_z: f64) -> Result<(f64, f64)> {
    if k1 == 0 || k < k1 || j < 2 || !(sigma_z > 0.0) {
        return Err(Error::DomainError(format!(
            "need k >= k1 >= 1, J >= 2, sigma_z > 0 (got k={k}, k1={k1}, J={j}, sigma_z={sigma_z})"
        )));
    }
    let log_term = (2.0 * (j as f64).ln()).sqrt();
    let sparse = sigma_z * (k1 as f64).sqrt() / k as f64 * log_term;
    let standard = sigma_z * log_term / (k as f64).sqrt();
    Ok((sparse, standard))
}

/// An estimator in a study; the predictor spec comes from the model config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyEstimator {
    pub method: Method,
    #[serde(default)]
    pub solver: SolverOptions,
}

impl StudyEstimator {
    pub fn new(method: Method, solver: SolverOptions) -> Self {
        Self { method, solver }
    }
}

/// Metrics for one estimator on one replication.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorRecord {
    pub method: Method,
    pub att: f64,
    /// Mean squared gap over post-treatment periods.
    pub post_mse: f64,
    pub pre_mad: f64,
    /// Mean absolute gap of the raw useful covariates.
    pub useful_mad: f64,
    /// `(1/(k1+k2)) sum_{useful} (Z1 - Z0 w)^2` on raw covariates.
    pub predictor_match_mse: f64,
    /// Weight on the two donors that replicate the treated unit.
    pub w23: f64,
    pub mean_abs_tau: f64,
    pub bias_bound: f64,
    /// `sigma_eps sqrt(1 + ||w||^2)`, the SD of a single post-period gap from
    /// idiosyncratic noise alone.
    pub noise_se: f64,
    pub lambda_star: Option<f64>,
    pub v: Option<Vec<f64>>,
    pub nuisance_zero_frac: Option<f64>,
    pub useful_zero_frac: Option<f64>,
    /// Share of total V mass on nuisance covariates.
    pub nuisance_mass: Option<f64>,
    pub k_used: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub replication: usize,
    pub estimators: Vec<EstimatorRecord>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    /// Monte Carlo standard error of the mean.
    pub se: f64,
    pub q05: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub q95: f64,
}

impl MetricSummary {
    pub fn from_values(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (n - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
        };
        Some(Self {
            n,
            mean,
            sd,
            se: sd / (n as f64).sqrt(),
            q05: q(0.05),
            q25: q(0.25),
            median: q(0.5),
            q75: q(0.75),
            q95: q(0.95),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyResult {
    pub model: FactorModelConfig,
    pub seed: u64,
    pub replications: Vec<ReplicationRecord>,
    /// method label → metric name → summary over successful replications.
    pub summary: BTreeMap<String, BTreeMap<String, MetricSummary>>,
    pub failed: usize,
}

impl StudyResult {
    /// Successful records for `method`, in replication order.
    pub fn records(&self, method: Method) -> Vec<&EstimatorRecord> {
        self.replications
            .iter()
            .filter(|r| r.error.is_none())
            .flat_map(|r| r.estimators.iter().filter(move |e| e.method == method))
            .collect()
    }

    pub fn metric(&self, method: Method, name: &str) -> Option<&MetricSummary> {
        self.summary.get(method.label())?.get(name)
    }

    /// Per-replication differences `a - b` of a metric between two methods.
    pub fn paired_difference(&self, a: Method, b: Method, metric: fn(&EstimatorRecord) -> f64) -> Option<MetricSummary> {
        let diffs: Vec<f64> = self
            .replications
            .iter()
            .filter(|r| r.error.is_none())
            .filter_map(|r| {
                let x = r.estimators.iter().find(|e| e.method == a)?;
                let y = r.estimators.iter().find(|e| e.method == b)?;
                Some(metric(x) - metric(y))
            })
            .collect();
        MetricSummary::from_values(&diffs)
    }
}

fn record_for(
    sim: &SimulatedPanel,
    est: &StudyEstimator,
    spec: &PredictorSpec,
) -> Result<EstimatorRecord> {
    let panel = &sim.panel;
    let truth = &sim.truth;
    let cfg = EstimatorConfig::new(est.method, spec.clone(), est.solver.clone());
    let (effect, fit) = cfg.run(panel)?;
    let w = match &fit {
        Some(f) => f.w_star.clone(),
        None => DonorWeights::uniform(panel.num_donors()),
    };
    let t0 = panel.t0();
    let y1 = panel.treated_outcomes();
    let post_mse =
        effect.tau_series.iter().map(|t| t * t).sum::<f64>() / effect.tau_series.len() as f64;
    let pre_y: Vec<f64> = (0..t0).map(|s| y1[s]).collect();
    let pre_mad = mad(&pre_y, &effect.counterfactual[..t0])?;

    let kz = truth.z.ncols();
    let z_gap = |k: usize| {
        truth.z[(0, k)]
            - (0..w.len())
                .map(|j| truth.z[(j + 1, k)] * w.values()[j])
                .sum::<f64>()
    };
    let useful_mad = if truth.useful.is_empty() {
        0.0
    } else {
        truth.useful.iter().map(|&k| z_gap(k).abs()).sum::<f64>() / truth.useful.len() as f64
    };
    let predictor_match_mse = if kz == 0 {
        0.0
    } else {
        truth.useful.iter().map(|&k| z_gap(k).powi(2)).sum::<f64>() / kz as f64
    };
    let bias_bound = bias_bound_oracle(sim, &w)?.bound;
    let w_norm_sq: f64 = w.values().iter().map(|x| x * x).sum();
    let mean_abs_tau =
        effect.tau_series.iter().map(|t| t.abs()).sum::<f64>() / effect.tau_series.len() as f64;

    let mut rec = EstimatorRecord {
        method: est.method,
        att: effect.att,
        post_mse,
        pre_mad,
        useful_mad,
        predictor_match_mse,
        w23: w.values()[0] + w.values()[1],
        mean_abs_tau,
        bias_bound,
        noise_se: truth.sigma_eps * (1.0 + w_norm_sq).sqrt(),
        lambda_star: None,
        v: None,
        nuisance_zero_frac: None,
        useful_zero_frac: None,
        nuisance_mass: None,
        k_used: effect.k_used,
    };
    if let Some(fit) = fit {
        let v = fit.v_star.values();
        let thr = est.solver.zero_threshold;
        let zero_frac = |idx: &[usize]| {
            (!idx.is_empty())
                .then(|| idx.iter().filter(|&&k| v[k] <= thr).count() as f64 / idx.len() as f64)
        };
        let total: f64 = v.iter().sum();
        rec.nuisance_zero_frac = zero_frac(&truth.nuisance);
        rec.useful_zero_frac = zero_frac(&truth.useful);
        rec.nuisance_mass = Some(truth.nuisance.iter().map(|&k| v[k]).sum::<f64>() / total);
        rec.lambda_star = Some(fit.lambda_star);
        rec.v = Some(v.to_vec());
    }
    Ok(rec)
}

fn run_replication(
    model: &FactorModelConfig,
    estimators: &[StudyEstimator],
    spec: &PredictorSpec,
    seed: u64,
    rep: usize,
) -> ReplicationRecord {
    let outcome = simulate_with(model, &mut replication_rng(seed, rep as u64)).and_then(|sim| {
        estimators
            .iter()
            .map(|e| record_for(&sim, e, spec))
            .collect::<Result<Vec<_>>>()
    });
    match outcome {
        Ok(estimators) => ReplicationRecord {
            replication: rep,
            estimators,
            error: None,
        },
        Err(e) => ReplicationRecord {
            replication: rep,
            estimators: Vec::new(),
            error: Some(e.to_string()),
        },
    }
}

const METRICS: &[(&str, fn(&EstimatorRecord) -> Option<f64>)] = &[
    ("att", |r| Some(r.att)),
    ("post_mse", |r| Some(r.post_mse)),
    ("pre_mad", |r| Some(r.pre_mad)),
    ("useful_mad", |r| Some(r.useful_mad)),
    ("predictor_match_mse", |r| Some(r.predictor_match_mse)),
    ("w23", |r| Some(r.w23)),
    ("mean_abs_tau", |r| Some(r.mean_abs_tau)),
    ("bias_bound", |r| Some(r.bias_bound)),
    ("lambda_star", |r| r.lambda_star),
    ("nuisance_zero_frac", |r| r.nuisance_zero_frac),
    ("useful_zero_frac", |r| r.useful_zero_frac),
    ("nuisance_mass", |r| r.nuisance_mass),
    ("k_used", |r| r.k_used.map(|k| k as f64)),
];

/// Runs `replications` independent draws of the model, fitting every estimator
/// on each. Replication `r` uses the RNG stream `r` of `seed`, so results do
/// not depend on scheduling. Fails if more than 5% of replications error.
pub fn run_study(
    model: &FactorModelConfig,
    estimators: &[StudyEstimator],
    replications: usize,
    seed: u64,
) -> Result<StudyResult> {
    model.validate()?;
    if replications == 0 {
        return Err(Error::ConfigError("replications must be >= 1".into()));
    }
    if estimators.is_empty() {
        return Err(Error::ConfigError("a study needs at least one estimator".into()));
    }
    let spec = model.predictor_spec();
    let records: Vec<ReplicationRecord> = (0..replications)
        .into_par_iter()
        .map(|rep| run_replication(model, estimators, &spec, seed, rep))
        .collect();
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    if failed * 20 > replications {
        let first = records
            .iter()
            .find_map(|r| r.error.clone())
            .unwrap_or_default();
        return Err(Error::StudyFailed {
            failed,
            total: replications,
            first,
        });
    }
    let mut summary = BTreeMap::new();
    for est in estimators {
        let ok: Vec<&EstimatorRecord> = records
            .iter()
            .filter(|r| r.error.is_none())
            .flat_map(|r| r.estimators.iter().filter(|e| e.method == est.method))
            .collect();
        let mut metrics = BTreeMap::new();
        for (name, get) in METRICS {
            let vals: Vec<f64> = ok.iter().filter_map(|r| get(r)).collect();
            if let Some(s) = MetricSummary::from_values(&vals) {
                metrics.insert(name.to_string(), s);
            }
        }
        summary.insert(est.method.label().to_string(), metrics);
    }
    Ok(StudyResult {
        model: model.clone(),
        seed,
        replications: records,
        summary,
        failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_model_is_flat() {
        let cfg = FactorModelConfig {
            sigma_eps: 0.0,
            theta: Theta::Constant(0.0),
            loading: 0.0,
            ..Default::default()
        };
        let sim = simulate_panel(&cfg).unwrap();
        assert!(sim.panel.outcomes().iter().all(|&y| y == 100.0));
    }

    #[test]
    fn treated_useful_covariates_average_donors_one_and_two() {
        let sim = simulate_panel(&FactorModelConfig::default()).unwrap();
        let z = &sim.truth.z;
        for k in 0..5 {
            assert_eq!(z[(0, k)], 0.5 * (z[(1, k)] + z[(2, k)]));
        }
        assert_eq!(sim.panel.num_donors(), 20);
        assert_eq!(sim.panel.num_periods(), 30);
        assert_eq!(FactorModelConfig::default().predictor_spec().num_predictors(), 20);
    }

    #[test]
    fn seeds_reproduce_and_streams_differ() {
        let cfg = FactorModelConfig::default();
        let a = simulate_panel(&cfg).unwrap();
        let b = simulate_panel(&cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate_with(&cfg, &mut replication_rng(0, 1)).unwrap();
        assert_ne!(a.panel.outcomes(), c.panel.outcomes());
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            FactorModelConfig { rho: 1.0, ..Default::default() },
            FactorModelConfig { f: 6, ..Default::default() },
            FactorModelConfig { tv: 20, ..Default::default() },
            FactorModelConfig { n_lags: 11, ..Default::default() },
            FactorModelConfig { sigma_eps: -1.0, ..Default::default() },
        ] {
            assert!(matches!(cfg.validate(), Err(Error::ConfigError(_))), "{cfg:?}");
        }
    }

    #[test]
    fn mad_examples() {
        assert_eq!(mad(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mad(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert!(mad(&[1.0], &[]).is_err());
    }

    #[test]
    fn rate_oracle_values() {
        let (s, d) = mse_rate_oracle(20, 1, 20, 1.0).unwrap();
        assert!((s - 0.12239).abs() < 1e-4);
        assert!((d - 0.54736).abs() < 1e-4);
        let (s, d) = mse_rate_oracle(7, 7, 20, 0.3).unwrap();
        assert!((s - d).abs() < 1e-15);
        assert!(mse_rate_oracle(3, 4, 20, 1.0).is_err());
        assert!(mse_rate_oracle(3, 1, 1, 1.0).is_err());
    }

    #[test]
    fn quantiles_interpolate() {
        let s = MetricSummary::from_values(&[1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(s.mean, 3.0);
        assert_eq!(s.median, 3.0);
        assert_eq!(s.q25, 2.0);
        assert!((s.sd - 2.5f64.sqrt()).abs() < 1e-15);
    }
}
