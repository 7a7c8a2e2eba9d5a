use std::path::{Path, PathBuf};

use serde::Deserialize;
use sparse_sc::estimators::Method;
use sparse_sc::inference::Sampling;
use sparse_sc::panel::{LagAnchoring, LagSpec, PanelSchema, PredictorSpec};
use sparse_sc::simulation::FactorModelConfig;
use sparse_sc::solvers::SolverOptions;
use sparse_sc::{Error, Result};

pub const KEYS_HELP: &str = "\
CONFIG FILE (TOML). Unknown keys are errors. Relative paths resolve against the config file.

  seed = <u64>                  RNG seed (simulate, placebo); --seed overrides
  methods = [..]                estimators: \"did\", \"scm\", \"scm_cv\", \"sparse\"
                                (default all four)

  [data]                        estimate, placebo
  path = \"panel.csv\"            input CSV
  schema_file = \"schema.toml\"   optional; otherwise use an inline [schema] table

  [schema]
  treated_unit = \"A\"            label of the treated unit (required)
  t0 = <n>                      pre-treatment periods (required)
  tv = <n>                      training periods; the rest of the pre-period validates (required)
  layout = \"long\" | \"wide\"      default \"long\"
  unit_column / time_column / outcome_column   default \"unit\" / \"time\" / \"outcome\"
  predictor_columns = [..]      columns to load (default: every non-key column)
  time_columns = [..]           wide layout: outcome columns in time order
  unit_order / time_order = [..]  explicit orderings (default: sorted labels)

  [predictors]
  covariates = [..]             predictor columns averaged over the design window
  last_lags = <n>               add single-period outcome lags 1..=n of the window
  lags = [{ name, lag | period | window_mean | terms, anchoring }]
                                lag = l: l periods before the window end
                                period = i: fixed 0-based period index
                                window_mean = n: mean of the last n window periods
                                terms = [[index, weight], ..] with anchoring
                                \"window\" (default) or \"fixed\"
  standardize = true            center and scale rows on the training window
  drop_constant = false         drop rows constant across donors

  [solver]
  lower_tol = 1e-8              donor-weight solver tolerance
  lower_max_iter = 10000
  kkt_tol = 1e-6                accepted KKT residual
  outer_tol = 1e-9              relative improvement ending the V search
  outer_max_iter = 300
  zero_threshold = 1e-8         rescaled v_k at or below this counts as zero
  grid = { relative = { points = 20, lo = 1e-4, hi = 10.0 } } | { explicit = [..] }
  anchor = \"search\" | \"last\" | { fixed = <k> }

  [placebo]                     placebo
  method = \"sparse\"             estimator re-run on every draw
  b = 100                       number of draws
  sampling = \"with_replacement\" | \"without_replacement\"
  bias_corrected = false        divide by b - 1 instead of b

  [study]                       simulate
  replications = 200
  [study.model]                 factor model: j_plus_1 = 21, t_total = 30, t0 = 20,
                                tv = 10, k1 = 5, k2 = 5, n_lags = 10, f = 7,
                                group_size = 3, rho = 0.5, sigma_eps = 0.25,
                                delta = 100.0, theta = 1.0 (or a t_total x k1
                                array), loading = 1.0, sigma_z = 0.0

ENVIRONMENT
  SPARSE_SC_THREADS             maximum worker threads

EXIT CODES
  0 success, 2 data or configuration error, 3 solver error";

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    #[serde(default = "all_methods")]
    pub methods: Vec<Method>,
    pub data: Option<DataConfig>,
    pub schema: Option<PanelSchema>,
    pub predictors: Option<PredictorConfig>,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default)]
    pub placebo: PlaceboConfig,
    pub study: Option<StudyConfig>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn all_methods() -> Vec<Method> {
    vec![Method::Did, Method::Scm, Method::ScmCv, Method::Sparse]
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    pub schema_file: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    #[serde(default)]
    pub covariates: Vec<String>,
    #[serde(default)]
    pub last_lags: usize,
    #[serde(default)]
    pub lags: Vec<LagConfig>,
    #[serde(default = "yes")]
    pub standardize: bool,
    #[serde(default)]
    pub drop_constant: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagConfig {
    pub name: String,
    pub lag: Option<usize>,
    pub period: Option<usize>,
    pub window_mean: Option<usize>,
    pub terms: Option<Vec<(usize, f64)>>,
    pub anchoring: Option<LagAnchoring>,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlaceboConfig {
    pub method: Method,
    pub b: usize,
    pub sampling: Sampling,
    pub bias_corrected: bool,
}

impl Default for PlaceboConfig {
    fn default() -> Self {
        Self {
            method: Method::Sparse,
            b: 100,
            sampling: Sampling::default(),
            bias_corrected: false,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default)]
    pub model: FactorModelConfig,
}

fn default_replications() -> usize {
    200
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let mut cfg: RunConfig = toml::from_str(&text)
            .map_err(|e| Error::ConfigError(format!("{}: {e}", path.display())))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if cfg.methods.is_empty() {
            return Err(Error::ConfigError("methods must not be empty".into()));
        }
        Ok(cfg)
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Data path and schema for the estimate and placebo commands.
    pub fn data_source(&self) -> Result<(PathBuf, PanelSchema)> {
        let data = self
            .data
            .as_ref()
            .ok_or_else(|| Error::ConfigError("missing [data] section".into()))?;
        let schema = match (&data.schema_file, &self.schema) {
            (Some(f), None) => PanelSchema::from_toml_file(self.resolve(f))?,
            (None, Some(s)) => s.clone(),
            (Some(_), Some(_)) => {
                return Err(Error::ConfigError(
                    "give either data.schema_file or a [schema] table, not both".into(),
                ))
            }
            (None, None) => {
                return Err(Error::ConfigError(
                    "missing schema: add a [schema] table or data.schema_file".into(),
                ))
            }
        };
        Ok((self.resolve(&data.path), schema))
    }

    pub fn predictor_spec(&self) -> Result<PredictorSpec> {
        let p = self
            .predictors
            .as_ref()
            .ok_or_else(|| Error::ConfigError("missing [predictors] section".into()))?;
        let mut spec = PredictorSpec::with_last_lags(p.covariates.clone(), p.last_lags);
        for lag in &p.lags {
            spec.lags.push(lag.to_spec()?);
        }
        spec.standardize = p.standardize;
        spec.drop_constant = p.drop_constant;
        if spec.num_predictors() == 0 {
            return Err(Error::ConfigError("[predictors] defines no predictors".into()));
        }
        Ok(spec)
    }

    pub fn seed(&self, flag: Option<u64>) -> Result<u64> {
        flag.or(self.seed).ok_or_else(|| {
            Error::ConfigError("a seed is required: pass --seed or set seed in the config".into())
        })
    }
}

impl LagConfig {
    fn to_spec(&self) -> Result<LagSpec> {
        let given = [
            self.lag.is_some(),
            self.period.is_some(),
            self.window_mean.is_some(),
            self.terms.is_some(),
        ]
        .iter()
        .filter(|&&b| b)
        .count();
        if given != 1 {
            return Err(Error::ConfigError(format!(
                "lag '{}' needs exactly one of lag, period, window_mean, terms",
                self.name
            )));
        }
        if self.anchoring.is_some() && self.terms.is_none() {
            return Err(Error::ConfigError(format!(
                "lag '{}': anchoring only applies to terms",
                self.name
            )));
        }
        Ok(if let Some(l) = self.lag {
            LagSpec::lag(&self.name, l)
        } else if let Some(i) = self.period {
            LagSpec::period(&self.name, i)
        } else if let Some(n) = self.window_mean {
            if n == 0 {
                return Err(Error::ConfigError(format!("lag '{}': window_mean must be >= 1", self.name)));
            }
            LagSpec::window_mean(&self.name, n)
        } else {
            LagSpec {
                name: self.name.clone(),
                terms: self.terms.clone().unwrap_or_default(),
                anchoring: self.anchoring.unwrap_or_default(),
            }
        })
    }
}
