use std::collections::BTreeMap;

use nalgebra::DMatrix;
use sparse_sc::error::Error;
use sparse_sc::estimators::{EstimatorConfig, Method};
use sparse_sc::inference::{placebo_variance, placebo_variance_of, PlaceboOptions, Sampling};
use sparse_sc::panel::{PanelDataset, PredictorSpec};
use sparse_sc::simulation::{simulate_panel, FactorModelConfig};
use sparse_sc::solvers::{AnchorPolicy, LambdaGrid, SolverOptions};

fn sparse_config(spec: PredictorSpec) -> EstimatorConfig {
    EstimatorConfig::new(
        Method::Sparse,
        spec,
        SolverOptions {
            anchor: AnchorPolicy::Last,
            grid: LambdaGrid::Relative { points: 4, lo: 1e-3, hi: 1e1 },
            ..Default::default()
        },
    )
}

fn model() -> FactorModelConfig {
    FactorModelConfig {
        j_plus_1: 8,
        t_total: 16,
        t0: 12,
        tv: 6,
        k1: 2,
        k2: 1,
        n_lags: 3,
        f: 3,
        seed: 17,
        ..Default::default()
    }
}

#[test]
fn identical_donors_have_zero_placebo_variance() {
    let (n, t) = (6, 10);
    let y = DMatrix::from_fn(n, t, |i, s| if i == 0 { 5.0 + s as f64 } else { (s as f64 * 0.7).sin() });
    let panel = PanelDataset::new(
        (0..n).map(|i| format!("u{i}")).collect(),
        (0..t).map(|s| format!("{s:02}")).collect(),
        y,
        BTreeMap::new(),
        0,
        7,
        4,
    )
    .unwrap();
    let opts = PlaceboOptions { b: 12, seed: 1, ..Default::default() };
    for method in [Method::Did, Method::Sparse] {
        let cfg = EstimatorConfig { method, ..sparse_config(PredictorSpec::with_last_lags(vec![], 2)) };
        let r = placebo_variance(&panel, &cfg, &opts).unwrap();
        assert!(r.tau_draws.iter().all(|t| t.abs() < 1e-12), "{method:?}: {:?}", r.tau_draws);
        assert!(r.sd < 1e-12);
    }
}

#[test]
fn post_period_shift_leaves_variance_unchanged() {
    let m = model();
    let s = simulate_panel(&m).unwrap();
    let t0 = s.panel.t0();
    let shifted = s.panel.map_outcomes(|_, t, y| if t >= t0 { y + 40.0 } else { y });
    let cfg = sparse_config(m.predictor_spec());
    let opts = PlaceboOptions { b: 10, seed: 4, ..Default::default() };
    let a = placebo_variance(&s.panel, &cfg, &opts).unwrap();
    let b = placebo_variance(&shifted, &cfg, &opts).unwrap();
    assert!(a.variance > 0.0);
    assert!((a.variance - b.variance).abs() <= 1e-9 * (1.0 + a.variance));
    for (x, y) in a.tau_draws.iter().zip(&b.tau_draws) {
        assert!((x - y).abs() < 1e-8, "{x} vs {y}");
    }
}

#[test]
fn variance_ignores_draw_order_and_thread_count() {
    let m = model();
    let s = simulate_panel(&m).unwrap();
    let cfg = sparse_config(m.predictor_spec());
    let opts = PlaceboOptions { b: 9, seed: 8, ..Default::default() };
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| placebo_variance(&s.panel, &cfg, &opts).unwrap())
    };
    let (a, b) = (run(1), run(4));
    assert_eq!(a, b);
    let mut reversed = a.tau_draws.clone();
    reversed.reverse();
    assert!((placebo_variance_of(&reversed, false) - a.variance).abs() <= 1e-12 * (1.0 + a.variance));
}

#[test]
fn treated_unit_never_enters_a_placebo_fit() {
    let m = model();
    let s = simulate_panel(&m).unwrap();
    let treated = s.panel.treated_unit().to_string();
    let cfg = EstimatorConfig { method: Method::Did, ..sparse_config(m.predictor_spec()) };
    let opts = PlaceboOptions { b: 7, seed: 2, sampling: Sampling::WithoutReplacement, ..Default::default() };
    let r = placebo_variance(&s.panel, &cfg, &opts).unwrap();
    for d in &r.per_draw {
        assert_ne!(d.unit, treated);
        assert!(!d.donors.contains(&treated));
        assert_eq!(d.donors.len(), s.panel.num_donors() - 1);
    }
}

#[test]
fn two_donors_are_too_few() {
    let m = model();
    let s = simulate_panel(&m).unwrap();
    let small = s.panel.subset_units(&[0, 1, 2]).unwrap();
    let cfg = sparse_config(m.predictor_spec());
    assert!(matches!(
        placebo_variance(&small, &cfg, &PlaceboOptions::default()),
        Err(Error::InsufficientDonors { .. })
    ));
}
