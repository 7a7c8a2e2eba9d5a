/// Euclidean projection of `y` onto the probability simplex, written into `out`.
///
/// Sort-based O(n log n) algorithm: find the largest `rho` with
/// `u_rho > (sum_{i<=rho} u_i - 1) / rho` for `u` sorted descending.
pub fn project_simplex_into(y: &[f64], out: &mut [f64], scratch: &mut Vec<f64>) {
    debug_assert_eq!(y.len(), out.len());
    scratch.clear();
    scratch.extend_from_slice(y);
    scratch.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut theta = 0.0;
    for (i, &u) in scratch.iter().enumerate() {
        cumsum += u;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if u - t > 0.0 {
            theta = t;
        }
    }
    for (o, &v) in out.iter_mut().zip(y) {
        *o = (v - theta).max(0.0);
    }
}

pub fn project_simplex(y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; y.len()];
    project_simplex_into(y, &mut out, &mut Vec::with_capacity(y.len()));
    out
}

/// Clamps tiny negative round-off and renormalizes to sum one.
pub(crate) fn clean_simplex(w: &mut [f64]) {
    for x in w.iter_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
    let s: f64 = w.iter().sum();
    if s > 0.0 {
        w.iter_mut().for_each(|x| *x /= s);
    } else {
        let u = 1.0 / w.len() as f64;
        w.iter_mut().for_each(|x| *x = u);
    }
}
