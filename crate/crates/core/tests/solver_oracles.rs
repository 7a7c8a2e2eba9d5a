mod common;

use common::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;
use sparse_sc::solvers::{
    joint_penalized_step, lambda_path, lower_grad_v, lower_grad_w, lower_objective,
    relaxed_penalized_step, rescale_v, solve_lower, DonorWeights, PredictorWeights,
    SolverOptions,
};

fn opts() -> SolverOptions {
    SolverOptions::default()
}

#[test]
fn matches_brute_force_grid_on_small_instances() {
    let mut r = rng(11);
    for case in 0..40 {
        let k = r.random_range(1..=3);
        let j = r.random_range(1..=3);
        let inst = random_instance(&mut r, k, j);
        let v = PredictorWeights::free(inst.v.clone()).unwrap();
        let sol = solve_lower(&v, &inst.x1, &inst.x0, &opts()).unwrap();
        let grid = grid_search(&inst, 1000, sol.w.values(), 1e-6);
        assert!(
            sol.objective <= grid.min + 1e-6,
            "case {case}: {} vs grid {}",
            sol.objective,
            grid.min
        );
        assert!(grid.dist_to_near_optimal <= 1e-3 + 1e-12, "case {case}");
    }
}

#[test]
fn objective_agrees_with_direct_expansion() {
    let mut r = rng(3);
    for _ in 0..50 {
        let inst = random_instance(&mut r, 4, 5);
        let w = random_simplex_point(&mut r, 5);
        let v = PredictorWeights::free(inst.v.clone()).unwrap();
        let got =
            lower_objective(&v, &inst.x1, &inst.x0, &DonorWeights::new(w.clone()).unwrap())
                .unwrap();
        let want = loss(&inst.v, &inst.x1, &inst.x0, &w);
        assert!((got - want).abs() <= 1e-12 * want.max(1.0));
    }
}

#[test]
fn gradients_match_central_differences() {
    let h = 1e-6;
    let mut r = rng(5);
    for _ in 0..100 {
        let k = r.random_range(1..=6);
        let j = r.random_range(2..=6);
        let inst = random_instance(&mut r, k, j);
        let w = random_simplex_point(&mut r, j);
        let v = PredictorWeights::free(inst.v.clone()).unwrap();
        let dw = DonorWeights::new(w.clone()).unwrap();

        let gw = lower_grad_w(&v, &inst.x1, &inst.x0, &dw).unwrap();
        let fd_w: Vec<f64> = (0..j)
            .map(|i| {
                let (mut up, mut dn) = (w.clone(), w.clone());
                up[i] += h;
                dn[i] -= h;
                (loss(&inst.v, &inst.x1, &inst.x0, &up) - loss(&inst.v, &inst.x1, &inst.x0, &dn))
                    / (2.0 * h)
            })
            .collect();
        assert!(rel_err(gw.as_slice(), &fd_w) <= 1e-5);

        let gv = lower_grad_v(&inst.x1, &inst.x0, &dw).unwrap();
        let fd_v: Vec<f64> = (0..k)
            .map(|i| {
                let (mut up, mut dn) = (inst.v.clone(), inst.v.clone());
                up[i] += h;
                dn[i] -= h;
                let f = |vals: Vec<f64>| {
                    lower_objective(&PredictorWeights::free(vals).unwrap(), &inst.x1, &inst.x0, &dw)
                        .unwrap()
                };
                (f(up) - f(dn)) / (2.0 * h)
            })
            .collect();
        assert!(rel_err(gv.as_slice(), &fd_v) <= 1e-5);
    }
}

#[test]
fn midpoint_match_has_zero_projected_gradient() {
    let v = PredictorWeights::free(vec![1.0]).unwrap();
    let x1 = DVector::from_vec(vec![0.5]);
    let x0 = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
    let w = DonorWeights::new(vec![0.5, 0.5]).unwrap();
    let g = lower_grad_w(&v, &x1, &x0, &w).unwrap();
    assert!((g[0] - g[1]).abs() < 1e-15);
    assert_eq!(lower_grad_v(&x1, &x0, &w).unwrap()[0], 0.0);
}

#[test]
fn argmin_is_invariant_to_scaling_v() {
    let mut r = rng(17);
    for _ in 0..50 {
        let k = r.random_range(1..=6);
        let j = r.random_range(1..=6);
        let inst = random_instance(&mut r, k, j);
        let a = 10f64.powf(r.random_range(-3.0..3.0));
        let v = PredictorWeights::free(inst.v.clone()).unwrap();
        let w1 = solve_lower(&v, &inst.x1, &inst.x0, &opts()).unwrap().w;
        let w2 = solve_lower(&v.scaled(a), &inst.x1, &inst.x0, &opts()).unwrap().w;
        let d = w1
            .values()
            .iter()
            .zip(w2.values())
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max);
        assert!(d <= 1e-6, "a = {a}, diff = {d}");
    }
}

#[test]
fn noiseless_average_of_two_donors_is_recovered() {
    let mut r = rng(23);
    let x0 = DMatrix::from_fn(8, 6, |_, _| r.random_range(0.0..1.0));
    let x1 = (x0.column(1) + x0.column(2)) * 0.5;
    let v = PredictorWeights::uniform(8);
    let w = solve_lower(&v, &x1, &x0, &opts()).unwrap().w;
    let want = [0.0, 0.5, 0.5, 0.0, 0.0, 0.0];
    for (a, b) in w.values().iter().zip(want) {
        assert!((a - b).abs() < 1e-6);
    }
}

/// Predictor 0 determines validation outcomes; predictor 1 is unrelated.
fn noise_toy() -> sparse_sc::panel::DesignMatrices {
    let signal = [0.0, 1.0, 2.0, 3.0];
    let noise = [1.3, -0.7, 0.4, -1.1];
    let x0 = DMatrix::from_row_slice(2, 4, &[signal, noise].concat());
    let x1 = DVector::from_vec(vec![1.5, 0.9]);
    let y0_val = DMatrix::from_fn(6, 4, |t, j| signal[j] * (1.0 + 0.2 * t as f64));
    let y1_val = DVector::from_fn(6, |t, _| 1.5 * (1.0 + 0.2 * t as f64));
    design(x1, x0, y1_val, y0_val)
}

#[test]
fn noise_predictor_is_dropped_along_a_lambda_sweep() {
    let d = noise_toy();
    let grid: Vec<f64> = std::iter::once(0.0)
        .chain((0..12).map(|i| 1e-4 * 10f64.powf(i as f64 / 3.0)))
        .collect();
    let path = lambda_path(&d, &grid, 0, &opts()).unwrap();
    let threshold = path
        .iter()
        .position(|e| e.v.values()[1] <= 1e-8)
        .expect("noise weight reaches zero somewhere on the sweep");
    for e in &path[threshold..] {
        assert!(e.v.values()[1] <= 1e-8, "λ = {}: v = {:?}", e.lambda, e.v.values());
        assert!(e.val_mse < 1e-12);
    }
    assert!(path[threshold].lambda <= 1e-2);
}

#[test]
fn huge_penalty_leaves_only_the_anchor() {
    let mut r = rng(29);
    let x0 = DMatrix::from_fn(5, 6, |_, _| r.random::<f64>());
    let x1 = DVector::from_fn(5, |_, _| r.random::<f64>());
    let y0 = DMatrix::from_fn(7, 6, |_, _| r.random::<f64>());
    let y1 = DVector::from_fn(7, |_, _| r.random::<f64>());
    let d = design(x1.clone(), x0.clone(), y1, y0);
    let init = PredictorWeights::anchored(vec![1.0; 5], 2).unwrap();
    let (v, w) = joint_penalized_step(&d, 1e8, 2, &init, &opts()).unwrap();
    for (k, &vk) in v.values().iter().enumerate() {
        if k == 2 {
            assert_eq!(vk, 1.0);
        } else {
            assert_eq!(vk, 0.0);
        }
    }
    // w solves the single-predictor match on row 2
    let only = PredictorWeights::free(vec![0.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
    let best = solve_lower(&only, &x1, &x0, &opts()).unwrap();
    let got = lower_objective(&only, &x1, &x0, &w).unwrap();
    assert!(got <= best.objective + 1e-8);
}

/// Two donors with the treated value strictly between them on every row, so
/// w(v) is an interior weighted average and smooth in v.
#[test]
fn unanchored_relaxation_drives_v_to_zero() {
    let mut r = rng(31);
    let k = 4;
    let lo = DVector::from_fn(k, |_, _| r.random_range(0.0..1.0));
    let hi = DVector::from_fn(k, |i, _| lo[i] + r.random_range(0.5..1.5));
    let x1 = DVector::from_fn(k, |i, _| lo[i] + r.random_range(0.2..0.8) * (hi[i] - lo[i]));
    let x0 = DMatrix::from_fn(k, 2, |i, j| if j == 0 { lo[i] } else { hi[i] });
    let y0 = DMatrix::from_fn(6, 2, |_, _| r.random::<f64>());
    let y1 = DVector::from_fn(6, |_, _| r.random::<f64>());
    let d = design(x1, x0, y1, y0);
    let init = PredictorWeights::free(vec![1.0; k]).unwrap();
    // a larger iteration budget pushes Σv lower: there is no positive minimizer
    for lambda in [1e-2, 1e-1, 1.0] {
        let mut masses = Vec::new();
        for budget in [200, 2_000, 20_000] {
            let o = SolverOptions {
                outer_tol: 0.0,
                outer_max_iter: budget,
                ..opts()
            };
            let (v, _) = relaxed_penalized_step(&d, lambda, &init, &o).unwrap();
            masses.push(v.values().iter().sum::<f64>());
        }
        assert!(masses.windows(2).all(|m| m[1] < m[0]), "λ = {lambda}: {masses:?}");
        assert!(masses[2] < 1e-6, "λ = {lambda}: {masses:?}");
    }
    let o = opts();
    // the anchored step at the same λ keeps a positive anchor
    let anchored = PredictorWeights::anchored(vec![1.0; k], 0).unwrap();
    let (v, _) = joint_penalized_step(&d, 1e-2, 0, &anchored, &o).unwrap();
    assert_eq!(v.values()[0], 1.0);
}

#[test]
fn zero_penalty_path_is_the_unpenalized_descent() {
    let d = noise_toy();
    let path = lambda_path(&d, &[0.0], 0, &opts()).unwrap();
    assert_eq!(path.len(), 1);
    let init = sparse_sc::solvers::init_predictor_weights(&d, 0).unwrap();
    let (v, _) = joint_penalized_step(&d, 0.0, 0, &init, &opts()).unwrap();
    assert_eq!(path[0].v, rescale_v(&v).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rescale_keeps_the_zero_pattern(
        raw in proptest::collection::vec(prop_oneof![Just(0.0), 1e-300..1e6f64], 1..12)
    ) {
        prop_assume!(raw.iter().any(|&x| x > 0.0));
        let v = PredictorWeights::free(raw.clone()).unwrap();
        let s = rescale_v(&v).unwrap();
        for (a, b) in raw.iter().zip(s.values()) {
            prop_assert_eq!(*a == 0.0, *b == 0.0);
        }
        prop_assert_eq!(s.values().iter().cloned().fold(0.0, f64::max), 1.0);
    }

    #[test]
    fn solutions_stay_on_the_simplex(seed in any::<u64>(), k in 1usize..8, j in 1usize..10) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r, k, j);
        let v = PredictorWeights::free(inst.v).unwrap();
        let w = solve_lower(&v, &inst.x1, &inst.x0, &opts()).unwrap().w;
        let s: f64 = w.values().iter().sum();
        prop_assert!((s - 1.0).abs() <= 1e-10);
        prop_assert!(w.values().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn rescaled_v_has_the_same_argmin(seed in any::<u64>(), k in 1usize..6, j in 1usize..6) {
        let mut r = rng(seed);
        let inst = random_instance(&mut r, k, j);
        let v = PredictorWeights::free(inst.v).unwrap();
        let a = solve_lower(&v, &inst.x1, &inst.x0, &opts()).unwrap().w;
        let b = solve_lower(&rescale_v(&v).unwrap(), &inst.x1, &inst.x0, &opts()).unwrap().w;
        for (p, q) in a.values().iter().zip(b.values()) {
            prop_assert!((p - q).abs() <= 1e-6);
        }
    }
}
