use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sparse-sc"))
        .args(args)
        .env("SPARSE_SC_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn run_in(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec![cmd, "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    args.extend(extra);
    run(&args)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Compares against `tests/golden/<name>`; `UPDATE_GOLDEN=1` rewrites it.
fn check_golden(name: &str, actual: &str) {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    if std::env::var_os("UPDATE_GOLDEN").is_some() {
        fs::write(&path, actual).unwrap();
        return;
    }
    let expected = fs::read_to_string(&path).unwrap_or_else(|_| panic!("missing golden file {name}"));
    assert_eq!(actual, expected, "golden mismatch for {name}");
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("run.toml");
    fs::write(&p, body).unwrap();
    p
}

#[test]
fn estimate_matches_golden_files() {
    let out = tempfile::tempdir().unwrap();
    let o = run_in("estimate", &fixture("toy.toml"), out.path(), &["--quiet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(o.stdout.is_empty());
    for f in ["fit.json", "effects.csv", "summary.txt"] {
        check_golden(&format!("toy_{f}"), &fs::read_to_string(out.path().join(f)).unwrap());
    }
}

#[test]
fn estimate_prints_status_and_table() {
    let out = tempfile::tempdir().unwrap();
    let o = run_in("estimate", &fixture("toy.toml"), out.path(), &[]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("estimated 4 method(s) for A with 2 donors"));
    assert!(text.contains("sparse"));
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for dir in [&a, &b] {
        let o = run_in("simulate", &fixture("study.toml"), dir.path(), &["--quiet"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    for f in ["study.csv", "study_summary.json"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let csv = fs::read_to_string(a.path().join("study.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 2 * 3);
}

#[test]
fn seed_flag_changes_the_study() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_in("simulate", &fixture("study.toml"), a.path(), &["--quiet"]);
    run_in("simulate", &fixture("study.toml"), b.path(), &["--quiet", "--seed", "12"]);
    assert_ne!(fs::read(a.path().join("study.csv")).unwrap(), fs::read(b.path().join("study.csv")).unwrap());
}

#[test]
fn identical_donors_give_zero_placebo_sd() {
    let out = tempfile::tempdir().unwrap();
    let o = run_in("placebo", &fixture("identical.toml"), out.path(), &["--quiet"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let draws = fs::read_to_string(out.path().join("placebo.csv")).unwrap();
    assert_eq!(draws.lines().count(), 21);
    for line in draws.lines().skip(1) {
        let att: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(att.abs() < 1e-12, "{line}");
    }
    let summary = fs::read_to_string(out.path().join("summary.txt")).unwrap();
    assert!(summary.lines().nth(1).unwrap().contains(" 0.0000 "), "{summary}");
}

#[test]
fn missing_predictor_column_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        &format!(
            "[data]\npath = {:?}\n[schema]\ntreated_unit = \"A\"\nt0 = 6\ntv = 3\n[predictors]\ncovariates = [\"population\"]\n",
            fixture("toy.csv")
        ),
    );
    let o = run_in("estimate", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("population"), "{}", stderr(&o));
}

#[test]
fn two_donor_placebo_is_a_data_error() {
    let out = tempfile::tempdir().unwrap();
    let o = run_in("placebo", &fixture("toy.toml"), out.path(), &["--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("insufficient donors"), "{}", stderr(&o));
}

#[test]
fn nonstationary_factor_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\n[study]\nreplications = 1\n[study.model]\nrho = 1.0\n");
    let o = run_in("simulate", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("stationary"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_and_missing_seed_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "seed = 1\ncolour = \"red\"\n[study]\n");
    let o = run_in("simulate", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"), "{}", stderr(&o));

    let cfg = write_config(dir.path(), "[study]\nreplications = 1\n");
    let o = run_in("simulate", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));
}

#[test]
fn help_documents_every_config_key() {
    let o = run(&["estimate", "--help"]);
    assert!(o.status.success());
    let help = String::from_utf8(o.stdout).unwrap();
    for key in [
        "seed", "methods", "[data]", "schema_file", "[schema]", "treated_unit", "t0", "tv", "layout",
        "unit_column", "time_column", "outcome_column", "predictor_columns", "time_columns",
        "unit_order", "time_order", "[predictors]", "covariates", "last_lags", "lags", "window_mean",
        "terms", "anchoring", "standardize", "drop_constant", "[solver]", "lower_tol",
        "lower_max_iter", "kkt_tol", "outer_tol", "outer_max_iter", "zero_threshold", "grid",
        "anchor", "[placebo]", "method", "sampling", "bias_corrected", "[study]", "replications",
        "[study.model]", "j_plus_1", "t_total", "k1", "k2", "n_lags", "group_size", "rho",
        "sigma_eps", "delta", "theta", "loading", "sigma_z", "SPARSE_SC_THREADS", "--config",
        "--seed", "--out", "--quiet",
    ] {
        assert!(help.contains(key), "--help does not mention {key}");
    }
}

#[test]
fn bad_thread_count_is_rejected() {
    let o = Command::new(env!("CARGO_BIN_EXE_sparse-sc"))
        .args(["estimate", "--config", fixture("toy.toml").to_str().unwrap(), "--quiet"])
        .env("SPARSE_SC_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(2));
}
