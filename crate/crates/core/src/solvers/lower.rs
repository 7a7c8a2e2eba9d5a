//! Lower-level problem: `min_w sum_k v_k (x1_k - x0_k . w)^2` over the simplex.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::simplex::{clean_simplex, project_simplex_into};
use super::{DonorWeights, PredictorWeights, SolverOptions};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LowerSolution {
    pub w: DonorWeights,
    /// Value of the V-weighted loss at `w`.
    pub objective: f64,
    /// Scaled max violation of stationarity / complementarity.
    pub kkt_residual: f64,
    pub iterations: usize,
    /// Smallest curvature on the active face is negligible, so the
    /// minimizer is not unique.
    pub non_unique: bool,
}

fn check_dims(v: Option<&PredictorWeights>, x1: &DVector<f64>, x0: &DMatrix<f64>) -> Result<()> {
    if x0.nrows() != x1.len() {
        return Err(Error::DimensionError(format!(
            "x1 has {} rows but x0 has {}",
            x1.len(),
            x0.nrows()
        )));
    }
    if x0.ncols() == 0 {
        return Err(Error::DimensionError("no donors".into()));
    }
    if let Some(v) = v {
        if v.len() != x1.len() {
            return Err(Error::DimensionError(format!(
                "{} predictor weights for {} predictors",
                v.len(),
                x1.len()
            )));
        }
    }
    Ok(())
}

fn check_w(w: &DonorWeights, x0: &DMatrix<f64>) -> Result<()> {
    if w.len() != x0.ncols() {
        return Err(Error::DimensionError(format!(
            "{} donor weights for {} donors",
            w.len(),
            x0.ncols()
        )));
    }
    Ok(())
}

/// `sum_k v_k (x1_k - sum_j x0_kj w_j)^2`.
pub fn lower_objective(
    v: &PredictorWeights,
    x1: &DVector<f64>,
    x0: &DMatrix<f64>,
    w: &DonorWeights,
) -> Result<f64> {
    check_dims(Some(v), x1, x0)?;
    check_w(w, x0)?;
    Ok(weighted_loss(v.values(), x1, x0, w.values()))
}

pub(crate) fn weighted_loss(v: &[f64], x1: &DVector<f64>, x0: &DMatrix<f64>, w: &[f64]) -> f64 {
    (0..x1.len())
        .map(|k| {
            let fit: f64 = (0..x0.ncols()).map(|j| x0[(k, j)] * w[j]).sum();
            v[k] * (x1[k] - fit).powi(2)
        })
        .sum()
}

/// Gradient of the lower loss in `w`, in the expanded form
/// `-2 sum_k x_jk v_k x_1k + sum_k x_jk v_k (sum_i x_ik w_i) + sum_i w_i sum_k x_ik v_k x_jk`.
pub fn lower_grad_w(
    v: &PredictorWeights,
    x1: &DVector<f64>,
    x0: &DMatrix<f64>,
    w: &DonorWeights,
) -> Result<DVector<f64>> {
    check_dims(Some(v), x1, x0)?;
    check_w(w, x0)?;
    let (k, j) = x0.shape();
    let (v, w) = (v.values(), w.values());
    let fit: Vec<f64> = (0..k)
        .map(|kk| (0..j).map(|i| x0[(kk, i)] * w[i]).sum())
        .collect();
    Ok(DVector::from_fn(j, |jj, _| {
        let cross: f64 = (0..k).map(|kk| x0[(kk, jj)] * v[kk] * x1[kk]).sum();
        let left: f64 = (0..k).map(|kk| x0[(kk, jj)] * v[kk] * fit[kk]).sum();
        let right: f64 = (0..j)
            .map(|i| w[i] * (0..k).map(|kk| x0[(kk, i)] * v[kk] * x0[(kk, jj)]).sum::<f64>())
            .sum();
        -2.0 * cross + left + right
    }))
}

/// Gradient of the lower loss in `v`: the squared residual of each predictor row.
pub fn lower_grad_v(
    x1: &DVector<f64>,
    x0: &DMatrix<f64>,
    w: &DonorWeights,
) -> Result<DVector<f64>> {
    check_dims(None, x1, x0)?;
    check_w(w, x0)?;
    let fit = x0 * DVector::from_column_slice(w.values());
    Ok(DVector::from_fn(x1.len(), |k, _| (x1[k] - fit[k]).powi(2)))
}

/// Scale-free KKT residual of `w` for the simplex-constrained lower problem.
///
/// With gradient `g` and `c = w'g`, optimality requires `g_j >= c` for all `j`
/// and `w_j (g_j - c) = 0`. The largest violation is divided by the gradient's
/// Lipschitz bound so the value does not depend on the scale of `v`.
pub fn kkt_residual(
    v: &PredictorWeights,
    x1: &DVector<f64>,
    x0: &DMatrix<f64>,
    w: &DonorWeights,
) -> Result<f64> {
    let g = lower_grad_w(v, x1, x0, w)?;
    let scaled = DMatrix::from_fn(x0.nrows(), x0.ncols(), |k, j| v.values()[k] * x0[(k, j)]);
    let gram = x0.transpose() * scaled;
    Ok(residual_from_grad(g.as_slice(), w.values(), 2.0 * inf_norm(&gram)))
}

fn residual_from_grad(g: &[f64], w: &[f64], lip: f64) -> f64 {
    if lip <= 0.0 {
        return 0.0;
    }
    let c: f64 = g.iter().zip(w).map(|(a, b)| a * b).sum();
    g.iter()
        .zip(w)
        .map(|(&gj, &wj)| (c - gj).max(0.0).max(wj * (gj - c).abs()))
        .fold(0.0, f64::max)
        / lip
}

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.nrows())
        .map(|r| m.row(r).iter().map(|x| x.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `L(w) = c - 2 b'w + w'Gw` with `G = X0' V X0`, `b = X0' V x1`, `c = x1' V x1`.
pub(crate) struct Quadratic {
    pub g: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
    pub lip: f64,
}

impl Quadratic {
    pub fn new(v: &[f64], x1: &DVector<f64>, x0: &DMatrix<f64>) -> Self {
        let (k, j) = x0.shape();
        let mut scaled = x0.clone();
        for kk in 0..k {
            let vk = v[kk];
            for jj in 0..j {
                scaled[(kk, jj)] *= vk;
            }
        }
        let g = x0.tr_mul(&scaled);
        let b = scaled.tr_mul(x1);
        let c = (0..k).map(|kk| v[kk] * x1[kk] * x1[kk]).sum();
        let lip = 2.0 * inf_norm(&g);
        Self { g, b, c, lip }
    }

    pub fn value(&self, w: &DVector<f64>) -> f64 {
        let gw = &self.g * w;
        self.c - 2.0 * self.b.dot(w) + w.dot(&gw)
    }

    pub fn grad(&self, w: &DVector<f64>, out: &mut DVector<f64>) {
        self.g.mul_to(w, out);
        *out -= &self.b;
        *out *= 2.0;
    }

    /// The same quadratic divided by its Lipschitz constant. Minimizers are
    /// unchanged and every tolerance becomes relative.
    fn normalized(&self) -> Self {
        let s = self.lip;
        Self {
            g: &self.g / s,
            b: &self.b / s,
            c: self.c / s,
            lip: 1.0,
        }
    }

    /// Whether some direction within the simplex's affine hull has
    /// (numerically) zero curvature, so that minimizers need not be unique.
    fn flat_on_hull(&self) -> bool {
        let n = self.g.nrows();
        if n < 2 || self.lip <= 0.0 {
            return false;
        }
        let p = DMatrix::from_fn(n, n, |a, b| {
            (if a == b { 1.0 } else { 0.0 }) - 1.0 / n as f64
        });
        let mut vals: Vec<f64> = SymmetricEigen::new(&p * &self.g * &p)
            .eigenvalues
            .iter()
            .cloned()
            .collect();
        vals.sort_by(f64::total_cmp);
        vals[1] <= FLAT_CURVATURE * vals[n - 1].max(f64::MIN_POSITIVE)
    }

    fn with_ridge(&self, ridge: f64) -> Self {
        let mut g = self.g.clone();
        for i in 0..g.nrows() {
            g[(i, i)] += ridge;
        }
        Self {
            g,
            b: self.b.clone(),
            c: self.c,
            lip: self.lip + 2.0 * ridge,
        }
    }

    fn residual(&self, w: &DVector<f64>) -> f64 {
        let mut g = DVector::zeros(w.len());
        self.grad(w, &mut g);
        residual_from_grad(g.as_slice(), w.as_slice(), self.lip)
    }
}

/// Spectral projected gradient with Armijo backtracking. Every
/// `POLISH_EVERY` steps the support is solved exactly; the polished point is
/// returned once it is stationary.
///
/// Returns the iterate, the iteration count and the final stationarity measure.
/// Reaching `max_iter` is not an error here; callers judge the KKT residual.
pub(crate) fn projected_gradient(
    q: &Quadratic,
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> (DVector<f64>, usize, f64) {
    let n = start.len();
    let mut w = DVector::from_column_slice(start);
    clean_simplex(w.as_mut_slice());
    if n == 1 || q.lip <= 0.0 {
        return (w, 0, 0.0);
    }
    let lip = q.lip;
    let (alpha_min, alpha_max) = (1e-10 / lip, 1e10 / lip);
    let mut alpha = 1.0 / lip;
    let mut g = DVector::zeros(n);
    q.grad(&w, &mut g);
    let mut trial = DVector::zeros(n);
    let mut d = DVector::zeros(n);
    let mut gd_vec = DVector::zeros(n);
    let mut scratch = Vec::with_capacity(n);
    let mut residual = f64::INFINITY;

    for it in 0..max_iter {
        // stationarity measure: unit step of length 1/L
        for i in 0..n {
            trial[i] = w[i] - g[i] / lip;
        }
        project_simplex_into(trial.as_slice(), d.as_mut_slice(), &mut scratch);
        residual = (0..n).map(|i| (d[i] - w[i]).abs()).fold(0.0, f64::max);
        if residual <= tol {
            return (w, it, residual);
        }
        if it > 0 && it % POLISH_EVERY == 0 {
            if let Some(p) = polish(q, &w) {
                if stationarity(q, &p, &mut scratch) <= tol {
                    return (p, it, 0.0);
                }
            }
        }

        for i in 0..n {
            trial[i] = w[i] - alpha * g[i];
        }
        project_simplex_into(trial.as_slice(), d.as_mut_slice(), &mut scratch);
        d -= &w;
        let slope = g.dot(&d);
        if slope >= 0.0 {
            // round-off: the direction no longer descends
            return (w, it, residual);
        }
        q.g.mul_to(&d, &mut gd_vec);
        let curv = d.dot(&gd_vec);
        let mut t = 1.0;
        // f(w + t d) - f(w) = t g.d + t^2 d'Gd
        while t * slope + t * t * curv > 1e-4 * t * slope && t > 1e-12 {
            t *= 0.5;
        }
        w.axpy(t, &d, 1.0);
        let sy = 2.0 * t * t * curv;
        let ss = t * t * d.norm_squared();
        g.axpy(2.0 * t, &gd_vec, 1.0);
        if (it + 1) % 64 == 0 {
            clean_simplex(w.as_mut_slice());
            q.grad(&w, &mut g);
        }
        alpha = if sy > 0.0 {
            (ss / sy).clamp(alpha_min, alpha_max)
        } else {
            alpha_max
        };
    }
    (w, max_iter, residual)
}

const POLISH_EVERY: usize = 50;

/// `||w - P(w - grad/L)||_inf`.
fn stationarity(q: &Quadratic, w: &DVector<f64>, scratch: &mut Vec<f64>) -> f64 {
    let mut g = DVector::zeros(w.len());
    q.grad(w, &mut g);
    let trial: Vec<f64> = (0..w.len()).map(|i| w[i] - g[i] / q.lip).collect();
    let mut d = vec![0.0; w.len()];
    project_simplex_into(&trial, &mut d, scratch);
    (0..w.len()).map(|i| (d[i] - w[i]).abs()).fold(0.0, f64::max)
}

/// Minimizer of the quadratic on the affine hull of the face `support`.
///
/// `b` lies in the range of `G`, so the face KKT system is consistent even when
/// singular; the minimum-norm solution is then one of the minimizers.
fn face_minimizer(q: &Quadratic, support: &[usize]) -> Option<DVector<f64>> {
    let s = support.len();
    if s == 1 {
        return Some(DVector::from_element(1, 1.0));
    }
    let mut m = DMatrix::zeros(s + 1, s + 1);
    let mut rhs = DVector::zeros(s + 1);
    for (a, &ja) in support.iter().enumerate() {
        for (b, &jb) in support.iter().enumerate() {
            m[(a, b)] = 2.0 * q.g[(ja, jb)];
        }
        m[(a, s)] = 1.0;
        m[(s, a)] = 1.0;
        rhs[a] = 2.0 * q.b[ja];
    }
    rhs[s] = 1.0;
    let scale = q.lip.max(1.0);
    let accurate = |x: &DVector<f64>| {
        x.iter().all(|v| v.is_finite())
            && (&m * x - &rhs).amax() <= 1e-10 * scale * (1.0 + x.amax())
    };
    let sol = match m.clone().lu().solve(&rhs) {
        Some(x) if accurate(&x) => x,
        _ => {
            let x = m.clone().svd(true, true).solve(&rhs, 1e-12 * scale).ok()?;
            if !x.iter().all(|v| v.is_finite()) {
                return None;
            }
            x
        }
    };
    Some(sol.rows(0, s).into_owned())
}

/// Primal active-set method: move to the minimizer of the current face,
/// dropping coordinates that hit zero, then free the coordinate with the most
/// negative reduced gradient. Returns `None` if it stalls, so the caller can
/// fall back to projected gradient.
fn active_set(q: &Quadratic, start: &[f64], tol: f64) -> Option<(DVector<f64>, usize)> {
    let n = start.len();
    let mut w = DVector::from_column_slice(start);
    clean_simplex(w.as_mut_slice());
    let mut free: Vec<bool> = w.iter().map(|&x| x > 0.0).collect();
    let max_iter = 10 * n + 50;
    let mut g = DVector::zeros(n);
    let mut iters = 0;
    let mut last_added: Option<usize> = None;
    loop {
        loop {
            iters += 1;
            if iters > max_iter {
                return None;
            }
            let support: Vec<usize> = (0..n).filter(|&j| free[j]).collect();
            let z = face_minimizer(q, &support)?;
            if z.iter().all(|&x| x > 0.0) {
                for (a, &j) in support.iter().enumerate() {
                    w[j] = z[a];
                }
                break;
            }
            let mut alpha = 1.0f64;
            for (a, &j) in support.iter().enumerate() {
                if z[a] <= 0.0 {
                    alpha = alpha.min(w[j] / (w[j] - z[a]));
                }
            }
            let mut dropped = false;
            for (a, &j) in support.iter().enumerate() {
                w[j] += alpha * (z[a] - w[j]);
                if z[a] <= 0.0 && w[j] <= 1e-15 {
                    w[j] = 0.0;
                    free[j] = false;
                    dropped = true;
                }
            }
            if !dropped {
                return None;
            }
            if last_added.is_some_and(|j| !free[j]) && alpha == 0.0 {
                // the coordinate just freed left again without progress
                return None;
            }
        }
        clean_simplex(w.as_mut_slice());
        q.grad(&w, &mut g);
        let mu = g.dot(&w);
        let (j, gj) = (0..n)
            .filter(|&j| !free[j])
            .map(|j| (j, g[j]))
            .fold((usize::MAX, f64::INFINITY), |acc, (j, v)| if v < acc.1 { (j, v) } else { acc });
        if j == usize::MAX || (mu - gj) / q.lip <= tol {
            return Some((w, iters));
        }
        free[j] = true;
        last_added = Some(j);
    }
}

/// Solves the equality-constrained problem on the support of `w` exactly and
/// keeps the result when it is feasible and improves the KKT residual.
pub(crate) fn polish(q: &Quadratic, w: &DVector<f64>) -> Option<DVector<f64>> {
    let support: Vec<usize> = (0..w.len()).filter(|&j| w[j] > 0.0).collect();
    if support.len() < 2 {
        return None;
    }
    let sol = face_minimizer(q, &support)?;
    let mut out = DVector::zeros(w.len());
    for (a, &ja) in support.iter().enumerate() {
        if sol[a] < -1e-12 {
            return None;
        }
        out[ja] = sol[a].max(0.0);
    }
    clean_simplex(out.as_mut_slice());
    let (f_old, f_new) = (q.value(w), q.value(&out));
    let slack = 1e-13 * (1.0 + f_old.abs());
    if f_new <= f_old + slack && q.residual(&out) <= q.residual(w) {
        Some(out)
    } else {
        None
    }
}

const FLAT_CURVATURE: f64 = 1e-10;
const MIN_NORM_RIDGE: f64 = 1e-9;

/// Whether the active face has (numerically) zero curvature in some direction.
fn face_is_flat(q: &Quadratic, w: &DVector<f64>) -> bool {
    let support: Vec<usize> = (0..w.len()).filter(|&j| w[j] > 0.0).collect();
    let s = support.len();
    if s < 2 {
        return false;
    }
    let gs = DMatrix::from_fn(s, s, |a, b| q.g[(support[a], support[b])]);
    let p = DMatrix::from_fn(s, s, |a, b| {
        (if a == b { 1.0 } else { 0.0 }) - 1.0 / s as f64
    });
    let eig = SymmetricEigen::new(&p * gs * &p).eigenvalues;
    let mut vals: Vec<f64> = eig.iter().cloned().collect();
    vals.sort_by(f64::total_cmp);
    let top = vals.last().cloned().unwrap_or(0.0).max(0.0);
    // vals[0] is the 1-direction (exactly zero); the next is the face minimum
    vals[1] <= FLAT_CURVATURE * top.max(f64::MIN_POSITIVE)
}

/// Active set first; projected gradient (then a support polish) when the
/// active-set iteration stalls or ends short of stationarity.
fn minimize(q: &Quadratic, start: &[f64], opts: &SolverOptions) -> (DVector<f64>, usize) {
    let mut scratch = Vec::with_capacity(start.len());
    if let Some((w, iters)) = active_set(q, start, opts.lower_tol) {
        if stationarity(q, &w, &mut scratch) <= opts.lower_tol {
            return (w, iters);
        }
    }
    let (mut w, iters, _) = projected_gradient(q, start, opts.lower_tol, opts.lower_max_iter);
    if let Some(p) = polish(q, &w) {
        w = p;
    }
    (w, iters)
}

/// Minimizes the quadratic over the simplex. When the quadratic is flat on
/// the simplex's affine hull, the first solution is refined on the same
/// problem plus `MIN_NORM_RIDGE ||w||^2`, which selects (to within the ridge)
/// the minimizer of smallest norm. The answer then does not depend on the
/// scale of `v`, the donor order or the start point.
pub(crate) fn solve_quadratic(
    q: &Quadratic,
    start: &[f64],
    opts: &SolverOptions,
) -> Result<(DVector<f64>, usize)> {
    if start.len() == 1 || q.lip <= 0.0 {
        return Ok((DVector::from_element(start.len(), 1.0 / start.len() as f64), 0));
    }
    let q = &q.normalized();
    let (w, iters) = minimize(q, start, opts);
    if !q.flat_on_hull() {
        return Ok((w, iters));
    }
    let ridged = q.with_ridge(MIN_NORM_RIDGE);
    match active_set(&ridged, w.as_slice(), 1e-4 * MIN_NORM_RIDGE) {
        Some((sel, more)) if q.value(&sel) <= q.value(&w) + 2.0 * MIN_NORM_RIDGE => {
            Ok((sel, iters + more))
        }
        _ => Ok((w, iters)),
    }
}

/// `argmin_w ||x1 - x0 w||_V^2` over the simplex, started from uniform weights.
pub fn solve_lower(
    v: &PredictorWeights,
    x1: &DVector<f64>,
    x0: &DMatrix<f64>,
    opts: &SolverOptions,
) -> Result<LowerSolution> {
    let j = x0.ncols();
    solve_lower_from(v, x1, x0, &vec![1.0 / j.max(1) as f64; j], opts)
}

/// As [`solve_lower`] with an explicit starting point (projected onto the simplex).
pub fn solve_lower_from(
    v: &PredictorWeights,
    x1: &DVector<f64>,
    x0: &DMatrix<f64>,
    start: &[f64],
    opts: &SolverOptions,
) -> Result<LowerSolution> {
    check_dims(Some(v), x1, x0)?;
    if start.len() != x0.ncols() {
        return Err(Error::DimensionError("start point has wrong length".into()));
    }
    if !v.values().iter().any(|&x| x > 0.0) {
        return Err(Error::DomainError(
            "at least one predictor weight must be positive".into(),
        ));
    }
    let q = Quadratic::new(v.values(), x1, x0);
    let (w, iterations) = solve_quadratic(&q, start, opts)?;
    let kkt = q.residual(&w);
    if kkt > opts.kkt_tol {
        return Err(Error::SolverError {
            iterations,
            residual: kkt,
        });
    }
    let non_unique = face_is_flat(&q, &w);
    let w = DonorWeights::from_clean(w.as_slice().to_vec());
    Ok(LowerSolution {
        objective: weighted_loss(v.values(), x1, x0, w.values()),
        w,
        kkt_residual: kkt,
        iterations,
        non_unique,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pw(v: &[f64]) -> PredictorWeights {
        PredictorWeights::free(v.to_vec()).unwrap()
    }

    #[test]
    fn objective_examples() {
        let dw = |w: &[f64]| DonorWeights::new(w.to_vec()).unwrap();
        // midpoint match
        let x1 = DVector::from_vec(vec![0.5]);
        let x0 = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let l = lower_objective(&pw(&[1.0]), &x1, &x0, &dw(&[0.5, 0.5])).unwrap();
        assert_eq!(l, 0.0);
        // hand expansion: (1-0.6)^2 * 1 + (0-0.6)^2 * 0.5
        let x1 = DVector::from_vec(vec![1.0, 0.0]);
        let x0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]);
        let l = lower_objective(&pw(&[1.0, 0.5]), &x1, &x0, &dw(&[0.6, 0.4])).unwrap();
        assert!((l - 0.34).abs() < 1e-15);
    }

    #[test]
    fn dimension_errors() {
        let x1 = DVector::from_vec(vec![0.5, 1.0]);
        let x0 = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let w = DonorWeights::uniform(2);
        assert!(matches!(
            lower_objective(&pw(&[1.0, 1.0]), &x1, &x0, &w),
            Err(Error::DimensionError(_))
        ));
        assert!(matches!(
            lower_grad_v(&x1, &x0, &w),
            Err(Error::DimensionError(_))
        ));
        let x1 = DVector::from_vec(vec![0.5]);
        assert!(matches!(
            lower_grad_w(&pw(&[1.0]), &x1, &x0, &DonorWeights::uniform(3)),
            Err(Error::DimensionError(_))
        ));
    }

    #[test]
    fn midpoint_gradient_is_orthogonal_to_simplex() {
        let x1 = DVector::from_vec(vec![0.5]);
        let x0 = DMatrix::from_row_slice(1, 2, &[0.0, 1.0]);
        let w = DonorWeights::uniform(2);
        let g = lower_grad_w(&pw(&[1.0]), &x1, &x0, &w).unwrap();
        // projected onto the tangent space {d : sum d = 0}
        let mean = g.sum() / 2.0;
        assert!((g[0] - mean).abs() < 1e-15 && (g[1] - mean).abs() < 1e-15);
        let gv = lower_grad_v(&x1, &x0, &w).unwrap();
        assert_eq!(gv[0], 0.0);
    }

    #[test]
    fn singleton_simplex() {
        let x1 = DVector::from_vec(vec![3.0, -1.0]);
        let x0 = DMatrix::from_row_slice(2, 1, &[0.0, 5.0]);
        let s = solve_lower(&pw(&[1.0, 2.0]), &x1, &x0, &SolverOptions::default()).unwrap();
        assert_eq!(s.w.values(), &[1.0]);
    }

    #[test]
    fn recovers_average_of_two_donors() {
        let x0 = DMatrix::from_row_slice(
            3,
            4,
            &[0.1, 0.9, 0.4, 0.7, 0.8, 0.2, 0.5, 0.3, 0.3, 0.6, 0.9, 0.1],
        );
        let x1 = (x0.column(0) + x0.column(1)) * 0.5;
        let s = solve_lower(&pw(&[1.0, 0.7, 2.0]), &x1, &x0, &SolverOptions::default()).unwrap();
        let w = s.w.values();
        assert!((w[0] - 0.5).abs() < 1e-8 && (w[1] - 0.5).abs() < 1e-8, "{w:?}");
        assert!(w[2] < 1e-8 && w[3] < 1e-8);
        assert!(s.objective < 1e-14);
        assert!(s.kkt_residual <= 1e-6);
    }

    #[test]
    fn flat_face_is_reported() {
        // one predictor, two identical donors: any split is optimal
        let x1 = DVector::from_vec(vec![2.0]);
        let x0 = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let s = solve_lower(&pw(&[1.0]), &x1, &x0, &SolverOptions::default()).unwrap();
        assert!(s.non_unique);
        assert!(s.w.values().iter().all(|w| (w - 0.5).abs() < 1e-12));
    }

    #[test]
    fn all_zero_v_rejected() {
        let x1 = DVector::from_vec(vec![2.0]);
        let x0 = DMatrix::from_row_slice(1, 2, &[1.0, 3.0]);
        let v = PredictorWeights::free(vec![0.0]).unwrap();
        assert!(solve_lower(&v, &x1, &x0, &SolverOptions::default()).is_err());
    }
}
