use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use sparse_sc::estimators::{EffectEstimate, EstimatorConfig, Method, SparseScFit};
use sparse_sc::inference::{placebo_variance, PlaceboOptions};
use sparse_sc::panel::{load_panel, PanelDataset};
use sparse_sc::simulation::{run_study, StudyEstimator, StudyResult};
use sparse_sc::{Error, Result};

use crate::config::RunConfig;
use crate::Flags;

pub fn configure_threads() -> Result<()> {
    let Ok(raw) = std::env::var("SPARSE_SC_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::ConfigError(format!("SPARSE_SC_THREADS = '{raw}' is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::ConfigError(e.to_string()))
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| io_err(&path, e))
}

fn prepare_out(flags: &Flags) -> Result<()> {
    fs::create_dir_all(&flags.out).map_err(|e| io_err(&flags.out, e))
}

fn csv_string(rows: &[Vec<String>]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(r)
            .map_err(|e| Error::Io { path: "<csv>".into(), source: std::io::Error::other(e) })?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::Io { path: "<csv>".into(), source: std::io::Error::other(e.to_string()) })?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn json(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

fn load(cfg: &RunConfig) -> Result<PanelDataset> {
    let (path, schema) = cfg.data_source()?;
    load_panel(path, &schema)
}

#[derive(Serialize)]
struct EstimateEntry<'a> {
    method: &'static str,
    att: f64,
    tau_series: &'a [f64],
    k_used: Option<usize>,
    weights: Vec<(String, f64)>,
    fit: Option<&'a SparseScFit>,
}

#[derive(Serialize)]
struct FitReport<'a> {
    treated_unit: &'a str,
    donors: &'a [String],
    times: &'a [String],
    t0: usize,
    tv: usize,
    estimates: Vec<EstimateEntry<'a>>,
}

fn weights_of(panel: &PanelDataset, fit: Option<&SparseScFit>) -> Vec<(String, f64)> {
    let j = panel.num_donors();
    panel
        .donor_units()
        .iter()
        .enumerate()
        .map(|(i, d)| (d.clone(), fit.map_or(1.0 / j as f64, |f| f.w_star.values()[i])))
        .collect()
}

fn summary_table(rows: &[(Method, &EffectEstimate, Option<&SparseScFit>)]) -> String {
    let mut s = format!(
        "{:<8} {:>12} {:>12} {:>8} {:>12}\n",
        "method", "att", "pre_mse", "k_used", "lambda"
    );
    for (m, e, f) in rows {
        let pre = f.map(|f| format!("{:.4}", f.diagnostics.pre_mse)).unwrap_or_else(|| "-".into());
        let k = e.k_used.map(|k| k.to_string()).unwrap_or_else(|| "-".into());
        let lambda = f.map(|f| format!("{:.4e}", f.lambda_star)).unwrap_or_else(|| "-".into());
        let _ = writeln!(s, "{:<8} {:>12.4} {:>12} {:>8} {:>12}", m.label(), e.att, pre, k, lambda);
    }
    s
}

pub fn estimate(flags: &Flags) -> Result<()> {
    let cfg = RunConfig::load(&flags.config)?;
    let panel = load(&cfg)?;
    let spec = cfg.predictor_spec()?;
    prepare_out(flags)?;
    let mut results = Vec::new();
    for &m in &cfg.methods {
        let (effect, fit) = EstimatorConfig::new(m, spec.clone(), cfg.solver.clone()).run(&panel)?;
        results.push((m, effect, fit));
    }

    let y = panel.treated_outcomes();
    let mut rows = vec![["method", "time", "post", "y", "counterfactual", "gap"].map(String::from).to_vec()];
    for (m, e, _) in &results {
        for (s, time) in panel.times().iter().enumerate() {
            rows.push(vec![
                m.label().into(),
                time.clone(),
                u8::from(s >= panel.t0()).to_string(),
                y[s].to_string(),
                e.counterfactual[s].to_string(),
                (y[s] - e.counterfactual[s]).to_string(),
            ]);
        }
    }
    let report = FitReport {
        treated_unit: panel.treated_unit(),
        donors: panel.donor_units(),
        times: panel.times(),
        t0: panel.t0(),
        tv: panel.tv(),
        estimates: results
            .iter()
            .map(|(m, e, f)| EstimateEntry {
                method: m.label(),
                att: e.att,
                tau_series: &e.tau_series,
                k_used: e.k_used,
                weights: weights_of(&panel, f.as_ref()),
                fit: f.as_ref(),
            })
            .collect(),
    };
    let table: Vec<_> = results.iter().map(|(m, e, f)| (*m, e, f.as_ref())).collect();
    let summary = summary_table(&table);
    write_file(&flags.out, "fit.json", &json(&report))?;
    write_file(&flags.out, "effects.csv", &csv_string(&rows)?)?;
    write_file(&flags.out, "summary.txt", &summary)?;
    if !flags.quiet {
        println!(
            "estimated {} method(s) for {} with {} donors -> {}",
            results.len(),
            panel.treated_unit(),
            panel.num_donors(),
            flags.out.display()
        );
        print!("{summary}");
    }
    Ok(())
}

#[derive(Serialize)]
struct StudySummary<'a> {
    seed: u64,
    replications: usize,
    failed: usize,
    model: &'a sparse_sc::simulation::FactorModelConfig,
    methods: Vec<&'static str>,
    summary: &'a std::collections::BTreeMap<String, std::collections::BTreeMap<String, sparse_sc::simulation::MetricSummary>>,
}

fn study_rows(res: &StudyResult) -> Vec<Vec<String>> {
    let mut rows = vec![[
        "replication",
        "method",
        "att",
        "post_mse",
        "pre_mad",
        "useful_mad",
        "predictor_match_mse",
        "w23",
        "mean_abs_tau",
        "bias_bound",
        "noise_se",
        "lambda_star",
        "nuisance_zero_frac",
        "useful_zero_frac",
        "nuisance_mass",
        "k_used",
        "error",
    ]
    .map(String::from)
    .to_vec()];
    for rep in &res.replications {
        if let Some(err) = &rep.error {
            let mut r = vec![rep.replication.to_string()];
            r.extend(std::iter::repeat_n(String::new(), 15));
            r.push(err.clone());
            rows.push(r);
            continue;
        }
        for e in &rep.estimators {
            rows.push(vec![
                rep.replication.to_string(),
                e.method.label().into(),
                e.att.to_string(),
                e.post_mse.to_string(),
                e.pre_mad.to_string(),
                e.useful_mad.to_string(),
                e.predictor_match_mse.to_string(),
                e.w23.to_string(),
                e.mean_abs_tau.to_string(),
                e.bias_bound.to_string(),
                e.noise_se.to_string(),
                opt(e.lambda_star),
                opt(e.nuisance_zero_frac),
                opt(e.useful_zero_frac),
                opt(e.nuisance_mass),
                e.k_used.map(|k| k.to_string()).unwrap_or_default(),
                String::new(),
            ]);
        }
    }
    rows
}

pub fn simulate(flags: &Flags) -> Result<()> {
    let cfg = RunConfig::load(&flags.config)?;
    let seed = cfg.seed(flags.seed)?;
    let study = cfg
        .study
        .as_ref()
        .ok_or_else(|| Error::ConfigError("missing [study] section".into()))?;
    let estimators: Vec<StudyEstimator> = cfg
        .methods
        .iter()
        .map(|&m| StudyEstimator::new(m, cfg.solver.clone()))
        .collect();
    study.model.validate()?;
    prepare_out(flags)?;
    let res = run_study(&study.model, &estimators, study.replications, seed)?;
    let summary = StudySummary {
        seed,
        replications: study.replications,
        failed: res.failed,
        model: &res.model,
        methods: cfg.methods.iter().map(|m| m.label()).collect(),
        summary: &res.summary,
    };
    write_file(&flags.out, "study.csv", &csv_string(&study_rows(&res))?)?;
    write_file(&flags.out, "study_summary.json", &json(&summary))?;
    if !flags.quiet {
        println!(
            "simulated {} replications ({} failed) -> {}",
            study.replications,
            res.failed,
            flags.out.display()
        );
        println!("{:<8} {:>12} {:>10} {:>12}", "method", "post_mse", "w23", "nuis_zero");
        for m in &cfg.methods {
            let get = |k: &str| {
                res.metric(*m, k)
                    .map(|s| format!("{:.4}", s.mean))
                    .unwrap_or_else(|| "-".into())
            };
            println!(
                "{:<8} {:>12} {:>10} {:>12}",
                m.label(),
                get("post_mse"),
                get("w23"),
                get("nuisance_zero_frac")
            );
        }
    }
    Ok(())
}

pub fn placebo(flags: &Flags) -> Result<()> {
    let cfg = RunConfig::load(&flags.config)?;
    let seed = cfg.seed(flags.seed)?;
    let panel = load(&cfg)?;
    let spec = cfg.predictor_spec()?;
    let estimator = EstimatorConfig::new(cfg.placebo.method, spec, cfg.solver.clone());
    let opts = PlaceboOptions {
        b: cfg.placebo.b,
        seed,
        sampling: cfg.placebo.sampling,
        bias_corrected: cfg.placebo.bias_corrected,
    };
    let result = placebo_variance(&panel, &estimator, &opts)?;
    let (effect, _) = estimator.run(&panel)?;
    prepare_out(flags)?;
    let mut rows = vec![["draw", "unit", "att"].map(String::from).to_vec()];
    for d in &result.per_draw {
        rows.push(vec![d.draw.to_string(), d.unit.clone(), d.att.to_string()]);
    }
    let summary = format!(
        "{:<8} {:>12} {:>12} {:>6}\n{:<8} {:>12.4} {:>12.4} {:>6}\n",
        "method",
        "att",
        "placebo_sd",
        "b",
        cfg.placebo.method.label(),
        effect.att,
        result.sd,
        result.b
    );
    write_file(&flags.out, "placebo.csv", &csv_string(&rows)?)?;
    write_file(&flags.out, "summary.txt", &summary)?;
    if !flags.quiet {
        println!("{} placebo draws -> {}", result.b, flags.out.display());
        print!("{summary}");
    }
    Ok(())
}
