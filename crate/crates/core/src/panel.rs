//! Panel data model, CSV ingestion and construction of the predictor design.
//!
//! Units are stored with the treated unit in row 0 and the donor pool in rows
//! `1..=J`. Outcomes are a `(J+1) x T` matrix. Every predictor is stored as a
//! `(J+1) x T` matrix; unit-level characteristics are broadcast across time and
//! missing predictor cells are `NaN`.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PanelDataset {
    units: Vec<String>,
    times: Vec<String>,
    outcomes: DMatrix<f64>,
    predictors: BTreeMap<String, DMatrix<f64>>,
    t0: usize,
    tv: usize,
}

impl PanelDataset {
    /// Builds a panel from unit-major outcomes. `treated` indexes into `units`;
    /// the treated row is moved to position 0 and the remaining units keep
    /// their relative order.
    pub fn new(
        units: Vec<String>,
        times: Vec<String>,
        outcomes: DMatrix<f64>,
        predictors: BTreeMap<String, DMatrix<f64>>,
        treated: usize,
        t0: usize,
        tv: usize,
    ) -> Result<Self> {
        let n = units.len();
        let t = times.len();
        if treated >= n {
            return Err(Error::ConfigError(format!(
                "treated unit index {treated} out of range for {n} units"
            )));
        }
        if n < 3 {
            return Err(Error::InsufficientDonors {
                needed: 2,
                have: n.saturating_sub(1),
            });
        }
        if outcomes.nrows() != n || outcomes.ncols() != t {
            return Err(Error::DimensionError(format!(
                "outcomes are {}x{}, expected {n}x{t}",
                outcomes.nrows(),
                outcomes.ncols()
            )));
        }
        if !(1 <= tv && tv < t0 && t0 < t) {
            return Err(Error::ConfigError(format!(
                "periods must satisfy 1 <= tv < t0 < T, got tv={tv}, t0={t0}, T={t}"
            )));
        }
        let missing: Vec<(String, String)> = (0..n)
            .flat_map(|i| (0..t).map(move |s| (i, s)))
            .filter(|&(i, s)| !outcomes[(i, s)].is_finite())
            .map(|(i, s)| (units[i].clone(), times[s].clone()))
            .collect();
        if !missing.is_empty() {
            return Err(Error::MissingData(missing));
        }
        for (name, m) in &predictors {
            if m.nrows() != n || m.ncols() != t {
                return Err(Error::DimensionError(format!(
                    "predictor {name} is {}x{}, expected {n}x{t}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        let unique: HashSet<&String> = units.iter().collect();
        if unique.len() != n {
            return Err(Error::ConfigError("duplicate unit labels".into()));
        }

        let mut order = vec![treated];
        order.extend((0..n).filter(|&i| i != treated));
        let reorder = |m: &DMatrix<f64>| DMatrix::from_fn(n, t, |i, s| m[(order[i], s)]);
        Ok(Self {
            units: order.iter().map(|&i| units[i].clone()).collect(),
            times,
            outcomes: reorder(&outcomes),
            predictors: predictors
                .iter()
                .map(|(k, m)| (k.clone(), reorder(m)))
                .collect(),
            t0,
            tv,
        })
    }

    pub fn units(&self) -> &[String] {
        &self.units
    }

    pub fn treated_unit(&self) -> &str {
        &self.units[0]
    }

    pub fn donor_units(&self) -> &[String] {
        &self.units[1..]
    }

    pub fn times(&self) -> &[String] {
        &self.times
    }

    /// `(J+1) x T`, treated unit first.
    pub fn outcomes(&self) -> &DMatrix<f64> {
        &self.outcomes
    }

    pub fn predictors(&self) -> &BTreeMap<String, DMatrix<f64>> {
        &self.predictors
    }

    pub fn predictor(&self, name: &str) -> Option<&DMatrix<f64>> {
        self.predictors.get(name)
    }

    pub fn num_donors(&self) -> usize {
        self.units.len() - 1
    }

    pub fn num_periods(&self) -> usize {
        self.times.len()
    }

    pub fn t0(&self) -> usize {
        self.t0
    }

    pub fn tv(&self) -> usize {
        self.tv
    }

    pub fn treated_outcomes(&self) -> DVector<f64> {
        self.outcomes.row(0).transpose()
    }

    /// Donor outcomes as a `T x J` matrix, so that `Y0 * w` is the synthetic series.
    pub fn donor_outcomes(&self) -> DMatrix<f64> {
        self.outcomes.rows(1, self.num_donors()).transpose()
    }

    /// Adds a unit-level characteristic, broadcast over all periods. Values are
    /// given in the panel's current unit order (treated first).
    pub fn with_static_predictor(mut self, name: &str, values: &[f64]) -> Result<Self> {
        if values.len() != self.units.len() {
            return Err(Error::DimensionError(format!(
                "predictor {name} has {} values for {} units",
                values.len(),
                self.units.len()
            )));
        }
        let t = self.times.len();
        self.predictors.insert(
            name.to_string(),
            DMatrix::from_fn(values.len(), t, |i, _| values[i]),
        );
        Ok(self)
    }

    /// Re-labels which unit is treated. `unit` indexes the current order.
    /// The previous treated unit becomes a donor at the front of the pool.
    pub fn with_treated(&self, unit: usize) -> Result<Self> {
        Self::new(
            self.units.clone(),
            self.times.clone(),
            self.outcomes.clone(),
            self.predictors.clone(),
            unit,
            self.t0,
            self.tv,
        )
    }

    /// Keeps only the listed units (indices in the current order). The first
    /// listed unit becomes the treated unit.
    pub fn subset_units(&self, keep: &[usize]) -> Result<Self> {
        let t = self.times.len();
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(keep.len(), t, |i, s| m[(keep[i], s)]);
        Self::new(
            keep.iter().map(|&i| self.units[i].clone()).collect(),
            self.times.clone(),
            pick(&self.outcomes),
            self.predictors
                .iter()
                .map(|(k, m)| (k.clone(), pick(m)))
                .collect(),
            0,
            self.t0,
            self.tv,
        )
    }

    /// Returns a copy with the outcome matrix transformed element-wise.
    pub fn map_outcomes(&self, f: impl Fn(usize, usize, f64) -> f64) -> Self {
        let mut out = self.clone();
        for i in 0..out.outcomes.nrows() {
            for s in 0..out.outcomes.ncols() {
                out.outcomes[(i, s)] = f(i, s, out.outcomes[(i, s)]);
            }
        }
        out
    }

    /// Writes the panel in long form: `unit,time,outcome,<predictors...>`.
    /// Floats use the shortest round-trip representation, so reloading is exact.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e: csv::Error| Error::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        };
        let mut w = csv::Writer::from_path(path).map_err(io)?;
        let mut header = vec!["unit".to_string(), "time".into(), "outcome".into()];
        header.extend(self.predictors.keys().cloned());
        w.write_record(&header).map_err(io)?;
        for (i, unit) in self.units.iter().enumerate() {
            for (s, time) in self.times.iter().enumerate() {
                let mut rec = vec![unit.clone(), time.clone(), fmt_f64(self.outcomes[(i, s)])];
                rec.extend(self.predictors.values().map(|m| fmt_f64(m[(i, s)])));
                w.write_record(&rec).map_err(io)?;
            }
        }
        w.flush().map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })
    }
}

fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:?}")
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CsvLayout {
    #[default]
    Long,
    /// One row per unit; outcomes in `time_columns`, remaining listed
    /// predictor columns are unit-level characteristics.
    Wide,
}

/// Column-name and period configuration for [`load_panel`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PanelSchema {
    #[serde(default)]
    pub layout: CsvLayout,
    #[serde(default = "default_unit_column")]
    pub unit_column: String,
    #[serde(default = "default_time_column")]
    pub time_column: String,
    #[serde(default = "default_outcome_column")]
    pub outcome_column: String,
    /// Predictor columns to load. Empty means every non-key column.
    #[serde(default)]
    pub predictor_columns: Vec<String>,
    /// Outcome columns for the wide layout, in time order.
    #[serde(default)]
    pub time_columns: Vec<String>,
    pub treated_unit: String,
    /// Number of pre-treatment periods.
    pub t0: usize,
    /// Number of training periods (the rest of the pre-period is validation).
    pub tv: usize,
    #[serde(default)]
    pub unit_order: Vec<String>,
    #[serde(default)]
    pub time_order: Vec<String>,
}

fn default_unit_column() -> String {
    "unit".into()
}
fn default_time_column() -> String {
    "time".into()
}
fn default_outcome_column() -> String {
    "outcome".into()
}

impl PanelSchema {
    pub fn long(treated_unit: &str, t0: usize, tv: usize) -> Self {
        Self {
            layout: CsvLayout::Long,
            unit_column: default_unit_column(),
            time_column: default_time_column(),
            outcome_column: default_outcome_column(),
            predictor_columns: Vec::new(),
            time_columns: Vec::new(),
            treated_unit: treated_unit.to_string(),
            t0,
            tv,
            unit_order: Vec::new(),
            time_order: Vec::new(),
        }
    }

    pub fn from_toml_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| Error::ConfigError(format!("{}: {e}", path.display())))
    }
}

/// Sorts labels numerically when every label parses as a number, otherwise lexically.
fn sort_labels(labels: &mut [String]) {
    let numeric: Option<Vec<f64>> = labels.iter().map(|l| l.parse::<f64>().ok()).collect();
    match numeric {
        Some(_) => labels.sort_by(|a, b| {
            a.parse::<f64>()
                .unwrap()
                .total_cmp(&b.parse::<f64>().unwrap())
        }),
        None => labels.sort(),
    }
}

fn resolve_order(seen: Vec<String>, explicit: &[String], what: &str) -> Result<Vec<String>> {
    if explicit.is_empty() {
        let mut v = seen;
        sort_labels(&mut v);
        return Ok(v);
    }
    let seen_set: HashSet<&String> = seen.iter().collect();
    let explicit_set: HashSet<&String> = explicit.iter().collect();
    if seen_set != explicit_set || explicit_set.len() != explicit.len() {
        return Err(Error::ConfigError(format!(
            "explicit {what} order does not match the {what} labels in the data"
        )));
    }
    Ok(explicit.to_vec())
}

/// Loads a panel from CSV according to `schema`.
pub fn load_panel(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<PanelDataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    read_panel(file, schema)
}

pub fn read_panel<R: std::io::Read>(reader: R, schema: &PanelSchema) -> Result<PanelDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::ParseError {
            row: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::ConfigError(format!("column '{name}' not found in CSV header")))
    };
    let mut records = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::ParseError {
            row: i + 2,
            message: e.to_string(),
        })?;
        records.push((i + 2, rec));
    }
    match schema.layout {
        CsvLayout::Long => read_long(&headers, &records, schema, &col),
        CsvLayout::Wide => read_wide(&headers, &records, schema, &col),
    }
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
        return Ok(f64::NAN);
    }
    raw.parse::<f64>().map_err(|_| Error::ParseError {
        row,
        message: format!("non-numeric value '{raw}' in column '{column}'"),
    })
}

fn predictor_columns(
    headers: &[String],
    schema: &PanelSchema,
    keys: &[&str],
    col: &dyn Fn(&str) -> Result<usize>,
) -> Result<Vec<(String, usize)>> {
    if schema.predictor_columns.is_empty() {
        Ok(headers
            .iter()
            .enumerate()
            .filter(|(_, h)| !keys.contains(&h.as_str()))
            .map(|(i, h)| (h.clone(), i))
            .collect())
    } else {
        schema
            .predictor_columns
            .iter()
            .map(|p| Ok((p.clone(), col(p)?)))
            .collect()
    }
}

fn finish(
    units: Vec<String>,
    times: Vec<String>,
    outcomes: DMatrix<f64>,
    predictors: BTreeMap<String, DMatrix<f64>>,
    schema: &PanelSchema,
) -> Result<PanelDataset> {
    let treated = units
        .iter()
        .position(|u| *u == schema.treated_unit)
        .ok_or_else(|| {
            Error::ConfigError(format!(
                "treated unit '{}' not present in data",
                schema.treated_unit
            ))
        })?;
    PanelDataset::new(
        units,
        times,
        outcomes,
        predictors,
        treated,
        schema.t0,
        schema.tv,
    )
}

fn read_long(
    headers: &[String],
    records: &[(usize, csv::StringRecord)],
    schema: &PanelSchema,
    col: &dyn Fn(&str) -> Result<usize>,
) -> Result<PanelDataset> {
    let ucol = col(&schema.unit_column)?;
    let tcol = col(&schema.time_column)?;
    let ycol = col(&schema.outcome_column)?;
    let keys = [
        schema.unit_column.as_str(),
        schema.time_column.as_str(),
        schema.outcome_column.as_str(),
    ];
    let pcols = predictor_columns(headers, schema, &keys, col)?;

    let mut seen_units = Vec::new();
    let mut seen_times = Vec::new();
    let mut unit_set = HashSet::new();
    let mut time_set = HashSet::new();
    let mut cells: HashMap<(String, String), (usize, f64, Vec<f64>)> = HashMap::new();
    for (row, rec) in records {
        let unit = rec.get(ucol).unwrap_or("").to_string();
        let time = rec.get(tcol).unwrap_or("").to_string();
        if unit_set.insert(unit.clone()) {
            seen_units.push(unit.clone());
        }
        if time_set.insert(time.clone()) {
            seen_times.push(time.clone());
        }
        let y = parse_cell(rec.get(ycol).unwrap_or(""), *row, &schema.outcome_column)?;
        let preds = pcols
            .iter()
            .map(|(name, c)| parse_cell(rec.get(*c).unwrap_or(""), *row, name))
            .collect::<Result<Vec<_>>>()?;
        if cells
            .insert((unit.clone(), time.clone()), (*row, y, preds))
            .is_some()
        {
            return Err(Error::DuplicateObservation { unit, time });
        }
    }
    let units = resolve_order(seen_units, &schema.unit_order, "unit")?;
    let times = resolve_order(seen_times, &schema.time_order, "time")?;
    let (n, t) = (units.len(), times.len());
    let mut outcomes = DMatrix::from_element(n, t, f64::NAN);
    let mut preds: Vec<DMatrix<f64>> = vec![DMatrix::from_element(n, t, f64::NAN); pcols.len()];
    let mut missing = Vec::new();
    for (i, u) in units.iter().enumerate() {
        for (s, tl) in times.iter().enumerate() {
            match cells.get(&(u.clone(), tl.clone())) {
                Some((_, y, p)) if y.is_finite() => {
                    outcomes[(i, s)] = *y;
                    for (m, v) in preds.iter_mut().zip(p) {
                        m[(i, s)] = *v;
                    }
                }
                _ => missing.push((u.clone(), tl.clone())),
            }
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingData(missing));
    }
    let predictors = pcols
        .into_iter()
        .map(|(name, _)| name)
        .zip(preds)
        .collect();
    finish(units, times, outcomes, predictors, schema)
}

fn read_wide(
    headers: &[String],
    records: &[(usize, csv::StringRecord)],
    schema: &PanelSchema,
    col: &dyn Fn(&str) -> Result<usize>,
) -> Result<PanelDataset> {
    if schema.time_columns.is_empty() {
        return Err(Error::ConfigError(
            "wide layout requires time_columns".into(),
        ));
    }
    let ucol = col(&schema.unit_column)?;
    let tcols = schema
        .time_columns
        .iter()
        .map(|c| col(c))
        .collect::<Result<Vec<_>>>()?;
    let mut keys: Vec<&str> = vec![schema.unit_column.as_str()];
    keys.extend(schema.time_columns.iter().map(String::as_str));
    let pcols = predictor_columns(headers, schema, &keys, col)?;

    let mut seen_units = Vec::new();
    let mut rows: HashMap<String, (usize, &csv::StringRecord)> = HashMap::new();
    for (row, rec) in records {
        let unit = rec.get(ucol).unwrap_or("").to_string();
        if rows.insert(unit.clone(), (*row, rec)).is_some() {
            return Err(Error::DuplicateObservation {
                unit,
                time: "*".into(),
            });
        }
        seen_units.push(unit);
    }
    let units = resolve_order(seen_units, &schema.unit_order, "unit")?;
    let times = schema.time_columns.clone();
    let (n, t) = (units.len(), times.len());
    let mut outcomes = DMatrix::zeros(n, t);
    let mut preds: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, t); pcols.len()];
    let mut missing = Vec::new();
    for (i, u) in units.iter().enumerate() {
        let (row, rec) = rows[u];
        for (s, &c) in tcols.iter().enumerate() {
            let y = parse_cell(rec.get(c).unwrap_or(""), row, &times[s])?;
            if !y.is_finite() {
                missing.push((u.clone(), times[s].clone()));
            }
            outcomes[(i, s)] = y;
        }
        for (m, (name, c)) in preds.iter_mut().zip(&pcols) {
            let v = parse_cell(rec.get(*c).unwrap_or(""), row, name)?;
            m.row_mut(i).fill(v);
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingData(missing));
    }
    let predictors = pcols
        .into_iter()
        .map(|(name, _)| name)
        .zip(preds)
        .collect();
    finish(units, times, outcomes, predictors, schema)
}

/// How a lag specification's period indices are interpreted.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LagAnchoring {
    /// Offsets count back from the end of the design window: offset 1 is the
    /// window's last period. Shifting the window moves the lag with it.
    #[default]
    Window,
    /// Absolute period indices (0-based). Never shifted.
    Fixed,
}

/// A named linear combination of pre-treatment outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagSpec {
    pub name: String,
    pub terms: Vec<(usize, f64)>,
    pub anchoring: LagAnchoring,
}

impl LagSpec {
    /// The outcome `lag` periods back from the window end (`lag >= 1`).
    pub fn lag(name: impl Into<String>, lag: usize) -> Self {
        Self {
            name: name.into(),
            terms: vec![(lag, 1.0)],
            anchoring: LagAnchoring::Window,
        }
    }

    /// Mean of the outcome over the last `len` periods of the window.
    pub fn window_mean(name: impl Into<String>, len: usize) -> Self {
        let w = 1.0 / len as f64;
        Self {
            name: name.into(),
            terms: (1..=len).map(|l| (l, w)).collect(),
            anchoring: LagAnchoring::Window,
        }
    }

    /// The outcome at a fixed period index.
    pub fn period(name: impl Into<String>, index: usize) -> Self {
        Self {
            name: name.into(),
            terms: vec![(index, 1.0)],
            anchoring: LagAnchoring::Fixed,
        }
    }

    fn resolve(&self, window: Window, t0: usize) -> Result<Vec<(usize, f64)>> {
        self.terms
            .iter()
            .map(|&(idx, w)| {
                let t = match self.anchoring {
                    LagAnchoring::Window => {
                        if idx == 0 || idx > window.len() {
                            return Err(Error::ConfigError(format!(
                                "lag {} of '{}' falls outside the {}-period window",
                                idx,
                                self.name,
                                window.len()
                            )));
                        }
                        window.end - idx
                    }
                    LagAnchoring::Fixed => {
                        if idx >= t0 {
                            return Err(Error::ConfigError(format!(
                                "'{}' uses period {idx}, which is not pre-treatment",
                                self.name
                            )));
                        }
                        idx
                    }
                };
                Ok((t, w))
            })
            .collect()
    }
}

/// Predictor rows of the design: covariates followed by outcome combinations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorSpec {
    pub covariates: Vec<String>,
    pub lags: Vec<LagSpec>,
    pub standardize: bool,
    /// Drop rows that are constant across donors instead of only flagging them.
    pub drop_constant: bool,
}

impl PredictorSpec {
    pub fn new(covariates: Vec<String>, lags: Vec<LagSpec>) -> Self {
        Self {
            covariates,
            lags,
            standardize: true,
            drop_constant: false,
        }
    }

    /// Covariates plus single-period lags `1..=n_lags` of the window.
    pub fn with_last_lags(covariates: Vec<String>, n_lags: usize) -> Self {
        let lags = (1..=n_lags)
            .rev()
            .map(|l| LagSpec::lag(format!("y_lag{l}"), l))
            .collect();
        Self::new(covariates, lags)
    }

    pub fn num_predictors(&self) -> usize {
        self.covariates.len() + self.lags.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Window {
    start: usize,
    end: usize,
}

impl Window {
    fn len(&self) -> usize {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowScaling {
    pub mean: f64,
    pub sd: f64,
}

/// Design matrices for the lower-level problem plus the outcome windows.
///
/// `x0_*` are `K x J`; `y0_*` are `periods x J`.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrices {
    pub predictor_names: Vec<String>,
    pub x1_train: DVector<f64>,
    pub x0_train: DMatrix<f64>,
    /// Present only when every lag fits inside the validation window.
    pub x1_val: Option<DVector<f64>>,
    pub x0_val: Option<DMatrix<f64>>,
    pub y1_train: DVector<f64>,
    pub y0_train: DMatrix<f64>,
    pub y1_val: DVector<f64>,
    pub y0_val: DMatrix<f64>,
    pub scaling: Vec<RowScaling>,
    /// Rows whose value does not vary across donors.
    pub constant_rows: Vec<usize>,
    pub shifted: bool,
}

impl DesignMatrices {
    pub fn num_predictors(&self) -> usize {
        self.x1_train.len()
    }

    pub fn num_donors(&self) -> usize {
        self.x0_train.ncols()
    }
}

/// Raw (unstandardized) predictor values for all units over a window: `K x (J+1)`.
fn raw_rows(panel: &PanelDataset, spec: &PredictorSpec, window: Window) -> Result<DMatrix<f64>> {
    let n = panel.units().len();
    let k = spec.num_predictors();
    let mut x = DMatrix::zeros(k, n);
    for (r, name) in spec.covariates.iter().enumerate() {
        let m = panel
            .predictor(name)
            .ok_or_else(|| Error::ConfigError(format!("unknown predictor '{name}'")))?;
        for i in 0..n {
            let vals: Vec<f64> = (window.start..window.end)
                .map(|s| m[(i, s)])
                .filter(|v| v.is_finite())
                .collect();
            if vals.is_empty() {
                return Err(Error::DegenerateDesign(format!(
                    "predictor '{name}' has no observations for unit {} in periods {}..{}",
                    panel.units()[i],
                    window.start + 1,
                    window.end
                )));
            }
            x[(r, i)] = vals.iter().sum::<f64>() / vals.len() as f64;
        }
    }
    let y = panel.outcomes();
    for (l, lag) in spec.lags.iter().enumerate() {
        let terms = lag.resolve(window, panel.t0())?;
        for i in 0..n {
            x[(spec.covariates.len() + l, i)] = terms.iter().map(|&(t, w)| w * y[(i, t)]).sum();
        }
    }
    Ok(x)
}

fn pooled_scaling(row: &[f64]) -> RowScaling {
    let n = row.len() as f64;
    let mean = row.iter().sum::<f64>() / n;
    let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    RowScaling {
        mean,
        sd: var.sqrt(),
    }
}

/// Builds training (or shifted training) and validation designs.
///
/// Training covers periods `[0, tv)`; with `shifted` it covers `[t0 - tv, t0)`.
/// Validation covers `[tv, t0)`. Covariates are averaged over the window.
/// When standardization is on, each row is centered and scaled by the pooled
/// treated+donor statistics of the training window; the same constants are
/// applied to the validation rows.
pub fn build_design(
    panel: &PanelDataset,
    spec: &PredictorSpec,
    shifted: bool,
) -> Result<DesignMatrices> {
    if spec.num_predictors() == 0 {
        return Err(Error::ConfigError("predictor spec is empty".into()));
    }
    let mut seen = HashSet::new();
    for name in spec
        .covariates
        .iter()
        .chain(spec.lags.iter().map(|l| &l.name))
    {
        if !seen.insert(name) {
            return Err(Error::ConfigError(format!("duplicate predictor '{name}'")));
        }
    }
    let (t0, tv) = (panel.t0(), panel.tv());
    let train = if shifted {
        Window {
            start: t0 - tv,
            end: t0,
        }
    } else {
        Window { start: 0, end: tv }
    };
    let val = Window { start: tv, end: t0 };

    let raw_train = raw_rows(panel, spec, train)?;
    let raw_val = match raw_rows(panel, spec, val) {
        Ok(m) => Some(m),
        Err(Error::ConfigError(msg)) if msg.contains("falls outside") => None,
        Err(e) => return Err(e),
    };

    let k = spec.num_predictors();
    let j = panel.num_donors();
    let mut names: Vec<String> = spec.covariates.clone();
    names.extend(spec.lags.iter().map(|l| l.name.clone()));

    let mut constant_rows = Vec::new();
    for r in 0..k {
        let donors: Vec<f64> = (1..=j).map(|i| raw_train[(r, i)]).collect();
        let lo = donors.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = donors.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if hi - lo <= 1e-12 * (1.0 + hi.abs().max(lo.abs())) {
            constant_rows.push(r);
        }
    }
    let keep: Vec<usize> = if spec.drop_constant {
        (0..k).filter(|r| !constant_rows.contains(r)).collect()
    } else {
        (0..k).collect()
    };
    if keep.is_empty() {
        return Err(Error::DegenerateDesign(
            "every predictor is constant across donors".into(),
        ));
    }

    let scaling: Vec<RowScaling> = keep
        .iter()
        .map(|&r| {
            if spec.standardize {
                let row: Vec<f64> = raw_train.row(r).iter().cloned().collect();
                pooled_scaling(&row)
            } else {
                RowScaling { mean: 0.0, sd: 1.0 }
            }
        })
        .collect();
    let apply = |raw: &DMatrix<f64>| {
        DMatrix::from_fn(keep.len(), raw.ncols(), |r, i| {
            let s = scaling[r];
            let centered = raw[(keep[r], i)] - s.mean;
            if s.sd > 0.0 {
                centered / s.sd
            } else {
                0.0
            }
        })
    };
    let x_train = apply(&raw_train);
    if x_train.iter().any(|v| !v.is_finite()) {
        return Err(Error::DegenerateDesign(
            "training design has non-finite entries".into(),
        ));
    }
    let x_val = raw_val.as_ref().map(apply);

    let outcomes = panel.outcomes();
    let series = |w: Window| {
        let y1 = DVector::from_fn(w.len(), |s, _| outcomes[(0, w.start + s)]);
        let y0 = DMatrix::from_fn(w.len(), j, |s, c| outcomes[(c + 1, w.start + s)]);
        (y1, y0)
    };
    let (y1_train, y0_train) = series(train);
    let (y1_val, y0_val) = series(val);

    let split = |x: &DMatrix<f64>| (x.column(0).into_owned(), x.columns(1, j).into_owned());
    let (x1_train, x0_train) = split(&x_train);
    let (x1_val, x0_val) = match x_val.as_ref().map(split) {
        Some((a, b)) => (Some(a), Some(b)),
        None => (None, None),
    };

    Ok(DesignMatrices {
        predictor_names: keep.iter().map(|&r| names[r].clone()).collect(),
        x1_train,
        x0_train,
        x1_val,
        x0_val,
        y1_train,
        y0_train,
        y1_val,
        y0_val,
        scaling,
        constant_rows: constant_rows
            .into_iter()
            .filter_map(|r| keep.iter().position(|&k| k == r))
            .collect(),
        shifted,
    })
}
