//! Python bindings: panels, predictor specs, the estimators, the lower-level
//! solver, placebo variance and the factor-model simulator.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use sparse_sc::estimators::{EstimatorConfig, Method, SparseScFit};
use sparse_sc::inference::{placebo_variance as placebo_impl, PlaceboOptions};
use sparse_sc::panel::{load_panel, PanelDataset, PanelSchema, PredictorSpec};
use sparse_sc::simulation::{simulate_panel as simulate_impl, FactorModelConfig};
use sparse_sc::solvers::{AnchorPolicy, LambdaGrid, PredictorWeights, SolverOptions};
use sparse_sc::Error;

fn to_py(e: Error) -> PyErr {
    if e.is_data_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn parse_method(name: &str) -> PyResult<Method> {
    match name {
        "did" => Ok(Method::Did),
        "scm" => Ok(Method::Scm),
        "scm_cv" => Ok(Method::ScmCv),
        "sparse" => Ok(Method::Sparse),
        other => Err(PyValueError::new_err(format!(
            "unknown method '{other}' (expected did, scm, scm_cv or sparse)"
        ))),
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> PyResult<DMatrix<f64>> {
    let n = rows.len();
    let t = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != t) {
        return Err(PyValueError::new_err(format!("{what} rows have unequal lengths")));
    }
    Ok(DMatrix::from_fn(n, t, |i, s| rows[i][s]))
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

/// A balanced panel with the treated unit first.
#[pyclass(name = "Panel", module = "sparse_sc", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPanel {
    inner: PanelDataset,
}

#[pymethods]
impl PyPanel {
    /// Builds a panel from a `(units x periods)` outcome array and optional
    /// predictor arrays of the same shape.
    #[new]
    #[pyo3(signature = (units, times, outcomes, treated, t0, tv, predictors=None))]
    fn new(
        units: Vec<String>,
        times: Vec<String>,
        outcomes: Vec<Vec<f64>>,
        treated: usize,
        t0: usize,
        tv: usize,
        predictors: Option<BTreeMap<String, Vec<Vec<f64>>>>,
    ) -> PyResult<Self> {
        let preds = predictors
            .unwrap_or_default()
            .into_iter()
            .map(|(k, v)| matrix(&v, &k).map(|m| (k, m)))
            .collect::<PyResult<BTreeMap<_, _>>>()?;
        let inner = PanelDataset::new(units, times, matrix(&outcomes, "outcomes")?, preds, treated, t0, tv)
            .map_err(to_py)?;
        Ok(Self { inner })
    }

    /// Loads a long-format CSV (`unit,time,outcome,...`).
    #[staticmethod]
    #[pyo3(signature = (path, treated_unit, t0, tv, unit_column="unit", time_column="time", outcome_column="outcome"))]
    fn from_csv(
        path: &str,
        treated_unit: &str,
        t0: usize,
        tv: usize,
        unit_column: &str,
        time_column: &str,
        outcome_column: &str,
    ) -> PyResult<Self> {
        let schema = PanelSchema {
            unit_column: unit_column.into(),
            time_column: time_column.into(),
            outcome_column: outcome_column.into(),
            ..PanelSchema::long(treated_unit, t0, tv)
        };
        Ok(Self { inner: load_panel(path, &schema).map_err(to_py)? })
    }

    #[getter]
    fn units(&self) -> Vec<String> {
        self.inner.units().to_vec()
    }

    #[getter]
    fn times(&self) -> Vec<String> {
        self.inner.times().to_vec()
    }

    #[getter]
    fn treated_unit(&self) -> String {
        self.inner.treated_unit().to_string()
    }

    #[getter]
    fn donor_units(&self) -> Vec<String> {
        self.inner.donor_units().to_vec()
    }

    #[getter]
    fn t0(&self) -> usize {
        self.inner.t0()
    }

    #[getter]
    fn tv(&self) -> usize {
        self.inner.tv()
    }

    #[getter]
    fn outcomes(&self) -> Vec<Vec<f64>> {
        rows_of(self.inner.outcomes())
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        self.inner.write_csv(path).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        format!(
            "Panel(treated={:?}, donors={}, periods={}, t0={}, tv={})",
            self.inner.treated_unit(),
            self.inner.num_donors(),
            self.inner.num_periods(),
            self.inner.t0(),
            self.inner.tv()
        )
    }
}

/// Which predictors enter the match: covariates (window means) followed by
/// single-period outcome lags `last_lags, ..., 1`.
#[pyclass(name = "PredictorSpec", module = "sparse_sc", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyPredictorSpec {
    inner: PredictorSpec,
}

#[pymethods]
impl PyPredictorSpec {
    #[new]
    #[pyo3(signature = (covariates=Vec::new(), last_lags=0, standardize=true))]
    fn new(covariates: Vec<String>, last_lags: usize, standardize: bool) -> Self {
        let mut inner = PredictorSpec::with_last_lags(covariates, last_lags);
        inner.standardize = standardize;
        Self { inner }
    }

    #[getter]
    fn num_predictors(&self) -> usize {
        self.inner.num_predictors()
    }
}

fn solver_options(anchor: Option<&Bound<'_, PyAny>>, lambdas: Option<Vec<f64>>, grid_points: usize) -> PyResult<SolverOptions> {
    let anchor = match anchor {
        None => AnchorPolicy::Search,
        Some(a) => {
            if let Ok(k) = a.extract::<usize>() {
                AnchorPolicy::Fixed(k)
            } else {
                match a.extract::<String>()?.as_str() {
                    "search" => AnchorPolicy::Search,
                    "last" => AnchorPolicy::Last,
                    other => return Err(PyValueError::new_err(format!("unknown anchor '{other}'"))),
                }
            }
        }
    };
    let grid = match lambdas {
        Some(l) => LambdaGrid::Explicit(l),
        None => LambdaGrid::Relative { points: grid_points, lo: 1e-4, hi: 1e1 },
    };
    Ok(SolverOptions { anchor, grid, ..Default::default() })
}

/// Result of one estimator run.
#[pyclass(name = "Fit", module = "sparse_sc", frozen, skip_from_py_object)]
struct PyFit {
    #[pyo3(get)]
    method: String,
    #[pyo3(get)]
    att: f64,
    #[pyo3(get)]
    tau_series: Vec<f64>,
    #[pyo3(get)]
    counterfactual: Vec<f64>,
    #[pyo3(get)]
    weights: Vec<f64>,
    #[pyo3(get)]
    donors: Vec<String>,
    #[pyo3(get)]
    k_used: Option<usize>,
    fit: Option<SparseScFit>,
}

#[pymethods]
impl PyFit {
    /// Diagonal of V*, or None for difference-in-differences.
    #[getter]
    fn v(&self) -> Option<Vec<f64>> {
        self.fit.as_ref().map(|f| f.v_star.values().to_vec())
    }

    #[getter]
    fn lambda_star(&self) -> Option<f64> {
        self.fit.as_ref().map(|f| f.lambda_star)
    }

    #[getter]
    fn predictor_names(&self) -> Option<Vec<String>> {
        self.fit.as_ref().map(|f| f.predictor_names.clone())
    }

    /// `(lambda, validation MSE, zero-set size)` for each point of the λ path.
    #[getter]
    fn path(&self) -> Vec<(f64, f64, usize)> {
        self.fit
            .as_ref()
            .map(|f| f.path.iter().map(|e| (e.lambda, e.val_mse, e.zero_set.len())).collect())
            .unwrap_or_default()
    }

    /// The full fit (weights, path, diagnostics) as JSON.
    fn to_json(&self) -> String {
        serde_json::to_string(&self.fit).expect("fit serializes")
    }

    fn __repr__(&self) -> String {
        format!("Fit(method={:?}, att={:.4})", self.method, self.att)
    }
}

/// Runs one estimator (`did`, `scm`, `scm_cv` or `sparse`) on a panel.
#[pyfunction]
#[pyo3(signature = (panel, spec, method="sparse", anchor=None, lambdas=None, grid_points=20))]
fn fit(
    panel: &PyPanel,
    spec: &PyPredictorSpec,
    method: &str,
    anchor: Option<&Bound<'_, PyAny>>,
    lambdas: Option<Vec<f64>>,
    grid_points: usize,
) -> PyResult<PyFit> {
    let cfg = EstimatorConfig::new(parse_method(method)?, spec.inner.clone(), solver_options(anchor, lambdas, grid_points)?);
    let (effect, fit) = cfg.run(&panel.inner).map_err(to_py)?;
    let j = panel.inner.num_donors();
    Ok(PyFit {
        method: effect.method.clone(),
        att: effect.att,
        tau_series: effect.tau_series,
        counterfactual: effect.counterfactual,
        weights: fit.as_ref().map_or(vec![1.0 / j as f64; j], |f| f.w_star.values().to_vec()),
        donors: panel.inner.donor_units().to_vec(),
        k_used: effect.k_used,
        fit,
    })
}

/// Donor weights minimizing `(x1 - X0 w)' diag(v) (x1 - X0 w)` on the simplex.
/// `x0` is given as K rows of J donor values. Returns `(w, objective)`.
#[pyfunction]
fn solve_lower(v: Vec<f64>, x1: Vec<f64>, x0: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, f64)> {
    let v = PredictorWeights::free(v).map_err(to_py)?;
    let sol = sparse_sc::solvers::solve_lower(&v, &DVector::from_vec(x1), &matrix(&x0, "x0")?, &SolverOptions::default())
        .map_err(to_py)?;
    Ok((sol.w.values().to_vec(), sol.objective))
}

/// Placebo-bootstrap variance: returns `(variance, sd, draws)`.
#[pyfunction]
#[pyo3(signature = (panel, spec, method="sparse", b=100, seed=0, anchor=None, grid_points=20))]
fn placebo_variance(
    panel: &PyPanel,
    spec: &PyPredictorSpec,
    method: &str,
    b: usize,
    seed: u64,
    anchor: Option<&Bound<'_, PyAny>>,
    grid_points: usize,
) -> PyResult<(f64, f64, Vec<f64>)> {
    let cfg = EstimatorConfig::new(parse_method(method)?, spec.inner.clone(), solver_options(anchor, None, grid_points)?);
    let opts = PlaceboOptions { b, seed, ..Default::default() };
    let r = placebo_impl(&panel.inner, &cfg, &opts).map_err(to_py)?;
    Ok((r.variance, r.sd, r.tau_draws))
}

/// Draws a panel from the linear factor model. Keyword arguments override the
/// model defaults (e.g. `j_plus_1=21, t0=20, k1=5, k2=5`). Returns the panel
/// and its predictor spec.
#[pyfunction]
#[pyo3(signature = (seed=0, **overrides))]
fn simulate_panel(seed: u64, overrides: Option<&Bound<'_, pyo3::types::PyDict>>) -> PyResult<(PyPanel, PyPredictorSpec)> {
    let mut cfg = serde_json::to_value(FactorModelConfig { seed, ..Default::default() }).expect("config serializes");
    if let Some(kw) = overrides {
        for (k, v) in kw.iter() {
            let key: String = k.extract()?;
            let value = if let Ok(i) = v.extract::<i64>() {
                serde_json::json!(i)
            } else {
                serde_json::json!(v.extract::<f64>()?)
            };
            cfg[key] = value;
        }
    }
    let cfg: FactorModelConfig =
        serde_json::from_value(cfg).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let sim = simulate_impl(&cfg).map_err(to_py)?;
    Ok((PyPanel { inner: sim.panel }, PyPredictorSpec { inner: cfg.predictor_spec() }))
}

#[pymodule]
#[pyo3(name = "sparse_sc")]
fn sparse_sc_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPanel>()?;
    m.add_class::<PyPredictorSpec>()?;
    m.add_class::<PyFit>()?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(solve_lower, m)?)?;
    m.add_function(wrap_pyfunction!(placebo_variance, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_panel, m)?)?;
    Ok(())
}
