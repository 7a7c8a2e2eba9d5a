//! Shared helpers for the integration tests: random lower-level instances and
//! the independent oracles they are checked against.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use sparse_sc::panel::{DesignMatrices, RowScaling};

pub struct Instance {
    pub v: Vec<f64>,
    pub x1: DVector<f64>,
    pub x0: DMatrix<f64>,
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Gaussian predictors, v uniform on [0.1, 2].
pub fn random_instance(rng: &mut impl Rng, k: usize, j: usize) -> Instance {
    let v = (0..k).map(|_| rng.random_range(0.1..2.0)).collect();
    let x1 = DVector::from_fn(k, |_, _| rng.sample(StandardNormal));
    let x0 = DMatrix::from_fn(k, j, |_, _| rng.sample(StandardNormal));
    Instance { v, x1, x0 }
}

/// Random point in the interior of the simplex.
pub fn random_simplex_point(rng: &mut impl Rng, j: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..j).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

/// `sum_k v_k (x1_k - sum_j x0_kj w_j)^2`, written out term by term.
pub fn loss(v: &[f64], x1: &DVector<f64>, x0: &DMatrix<f64>, w: &[f64]) -> f64 {
    let mut total = 0.0;
    for k in 0..v.len() {
        let mut fit = 0.0;
        for j in 0..w.len() {
            fit += x0[(k, j)] * w[j];
        }
        total += v[k] * (x1[k] - fit) * (x1[k] - fit);
    }
    total
}

/// Every point of the simplex grid with spacing `1/n` for `J <= 3`.
pub fn simplex_grid(j: usize, n: usize) -> Vec<Vec<f64>> {
    let h = 1.0 / n as f64;
    match j {
        1 => vec![vec![1.0]],
        2 => (0..=n).map(|a| vec![a as f64 * h, (n - a) as f64 * h]).collect(),
        3 => {
            let mut out = Vec::with_capacity((n + 1) * (n + 2) / 2);
            for a in 0..=n {
                for b in 0..=(n - a) {
                    out.push(vec![a as f64 * h, b as f64 * h, (n - a - b) as f64 * h]);
                }
            }
            out
        }
        _ => panic!("grid search only for J <= 3"),
    }
}

pub struct GridOutcome {
    pub min: f64,
    /// Distance (max norm) from the query point to the nearest grid point
    /// whose loss is within `slack` of the grid minimum.
    pub dist_to_near_optimal: f64,
}

pub fn grid_search(inst: &Instance, n: usize, query: &[f64], slack: f64) -> GridOutcome {
    let grid = simplex_grid(inst.x0.ncols(), n);
    let losses: Vec<f64> = grid
        .iter()
        .map(|w| loss(&inst.v, &inst.x1, &inst.x0, w))
        .collect();
    let min = losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let dist_to_near_optimal = grid
        .iter()
        .zip(&losses)
        .filter(|(_, &l)| l <= min + slack)
        .map(|(w, _)| {
            w.iter()
                .zip(query)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .fold(f64::INFINITY, f64::min);
    GridOutcome {
        min,
        dist_to_near_optimal,
    }
}

pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let scale = a.iter().chain(b).map(|x| x.abs()).fold(1e-12, f64::max);
    diff / scale
}

/// A design built directly from matrices; only the fields the solvers read
/// carry meaning.
pub fn design(
    x1: DVector<f64>,
    x0: DMatrix<f64>,
    y1_val: DVector<f64>,
    y0_val: DMatrix<f64>,
) -> DesignMatrices {
    let k = x1.len();
    DesignMatrices {
        predictor_names: (0..k).map(|i| format!("p{i}")).collect(),
        x1_train: x1,
        x0_train: x0,
        x1_val: None,
        x0_val: None,
        y1_train: y1_val.clone(),
        y0_train: y0_val.clone(),
        y1_val,
        y0_val,
        scaling: vec![RowScaling { mean: 0.0, sd: 1.0 }; k],
        constant_rows: Vec::new(),
        shifted: false,
    }
}
