//! L1-penalized logistic regression.
//!
//! Minimizes `(1/n) * sum(logloss) + lambda * sum(|beta_j|)` over
//! standardized features with an unpenalized intercept. Each outer iteration
//! builds the quadratic model of the logistic loss at the current point and
//! minimizes it plus the penalty by cyclic coordinate descent; a backtracking
//! line search on the true objective accepts the step. Iteration stops once
//! the subgradient optimality conditions hold to `tol`.
//!
//! The penalty is picked from a descending log-spaced grid by stratified
//! k-fold cross-validation on the mean squared error of the predicted
//! probabilities.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    fold_split, log1p_exp, sigmoid, stratified_folds, LearnError, Matrix, Model, Standardizer,
    TrainMatrix,
};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoSpec {
    /// Explicit penalty grid (strictly positive, descending). When empty a
    /// grid is derived from the data.
    pub lambdas: Vec<f64>,
    pub n_lambda: usize,
    /// Smallest grid value as a fraction of the largest.
    pub lambda_min_ratio: f64,
    pub cv_folds: usize,
    /// Optimality tolerance on the gradient conditions.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LassoSpec {
    fn default() -> Self {
        Self {
            lambdas: Vec::new(),
            n_lambda: 40,
            lambda_min_ratio: 1e-3,
            cv_folds: 15,
            tol: 1e-7,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoModel {
    pub standardizer: Standardizer,
    pub intercept: f64,
    /// Coefficients on the standardized scale.
    pub coef: Vec<f64>,
    pub lambda: f64,
    pub lambda_grid: Vec<f64>,
    /// Cross-validated MSE per grid value (empty when CV was skipped).
    pub cv_mse: Vec<f64>,
    pub seed: u64,
}

impl LassoModel {
    pub fn n_features(&self) -> usize {
        self.coef.len()
    }

    pub(crate) fn proba_row(&self, row: &[f64]) -> f64 {
        let mut z = row.to_vec();
        self.standardizer.transform_row_in_place(&mut z);
        sigmoid(self.intercept + dot(&self.coef, &z))
    }

    pub fn n_nonzero(&self) -> usize {
        self.coef.iter().filter(|&&c| c != 0.0).count()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Coefficients at one penalty value.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoFit {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub iterations: usize,
}

const MAX_SWEEPS: usize = 2_000;
const WARM_SWEEPS: usize = 10;

/// Logistic lasso problem on an already standardized design.
pub struct LassoProblem<'a> {
    z: &'a Matrix,
    y: &'a [u8],
    // column-major copy for the coordinate sweeps
    cols: Vec<Vec<f64>>,
}

impl<'a> LassoProblem<'a> {
    pub fn new(z: &'a Matrix, y: &'a [u8]) -> Self {
        let cols = (0..z.cols()).map(|j| z.column(j)).collect();
        Self { z, y, cols }
    }

    fn n(&self) -> f64 {
        self.y.len() as f64
    }

    fn linear_predictor(&self, b0: f64, beta: &[f64]) -> Vec<f64> {
        (0..self.z.rows())
            .map(|i| b0 + dot(self.z.row(i), beta))
            .collect()
    }

    fn mean_loss(&self, eta: &[f64]) -> f64 {
        eta.iter()
            .zip(self.y)
            .map(|(&e, &y)| log1p_exp(e) - f64::from(y) * e)
            .sum::<f64>()
            / self.n()
    }

    /// Mean logistic loss and its gradient `(d/d b0, d/d beta)`.
    pub fn smooth_loss_and_gradient(&self, b0: f64, beta: &[f64]) -> (f64, f64, Vec<f64>) {
        let eta = self.linear_predictor(b0, beta);
        let (g0, g) = self.gradient(&eta);
        (self.mean_loss(&eta), g0, g)
    }

    fn gradient(&self, eta: &[f64]) -> (f64, Vec<f64>) {
        let resid: Vec<f64> = eta
            .iter()
            .zip(self.y)
            .map(|(&e, &y)| sigmoid(e) - f64::from(y))
            .collect();
        let g0 = resid.iter().sum::<f64>() / self.n();
        let g = self.cols.iter().map(|c| dot(c, &resid) / self.n()).collect();
        (g0, g)
    }

    /// Largest violation of the optimality conditions at `(b0, beta)`.
    pub fn kkt_violation(&self, lambda: f64, b0: f64, beta: &[f64]) -> f64 {
        let eta = self.linear_predictor(b0, beta);
        let (g0, g) = self.gradient(&eta);
        kkt(lambda, g0, &g, beta)
    }

    /// Smallest penalty at which every slope is zero.
    pub fn lambda_max(&self) -> f64 {
        let ybar = self.y.iter().map(|&v| f64::from(v)).sum::<f64>() / self.n();
        self.cols
            .iter()
            .map(|c| {
                (c.iter().zip(self.y).map(|(z, &y)| z * (ybar - f64::from(y))).sum::<f64>()
                    / self.n())
                .abs()
            })
            .fold(0.0, f64::max)
    }

    /// Solves at `lambda`, warm-starting from `start`.
    pub fn solve(
        &self,
        lambda: f64,
        start: &LassoFit,
        tol: f64,
        max_iter: usize,
    ) -> Result<LassoFit, LearnError> {
        let n = self.n();
        let p = self.cols.len();
        let mut b0 = start.intercept;
        let mut beta = start.coef.clone();
        let mut eta = self.linear_predictor(b0, &beta);
        let penalty = |b: &[f64]| lambda * b.iter().map(|v| v.abs()).sum::<f64>();
        let mut objective = self.mean_loss(&eta) + penalty(&beta);
        let mut d = vec![0.0; p];
        let mut u = vec![0.0; eta.len()];
        let mut w = vec![0.0; eta.len()];
        for iter in 0..max_iter {
            let (g0, g) = self.gradient(&eta);
            let violation = kkt(lambda, g0, &g, &beta);
            if violation <= tol {
                return Ok(LassoFit {
                    intercept: b0,
                    coef: beta,
                    iterations: iter,
                });
            }
            for (wi, &e) in w.iter_mut().zip(&eta) {
                let pi = sigmoid(e);
                *wi = (pi * (1.0 - pi)).max(1e-5);
            }
            // working set: active coefficients and current violators
            let ws: Vec<usize> = (0..p)
                .filter(|&j| beta[j] != 0.0 || g[j].abs() > lambda)
                .collect();
            // quadratic model in covariance form over the working set
            let m = ws.len();
            let h0 = w.iter().sum::<f64>() / n;
            let cross: Vec<f64> = ws.iter().map(|&j| dot(&self.cols[j], &w) / n).collect();
            let mut gram = vec![0.0; m * m];
            let weighted: Vec<Vec<f64>> = ws
                .iter()
                .map(|&j| self.cols[j].iter().zip(&w).map(|(z, w)| z * w).collect())
                .collect();
            for a in 0..m {
                for b in 0..=a {
                    let v = dot(&weighted[a], &self.cols[ws[b]]) / n;
                    gram[a * m + b] = v;
                    gram[b * m + a] = v;
                }
            }
            let mut dw = vec![0.0; m];
            let mut gd = vec![0.0; m];
            let mut cd = 0.0;
            let mut d0 = 0.0;
            let inner_tol = (1e-3 * violation * violation).max(1e-24);
            for sweep in 0..MAX_SWEEPS {
                let mut max_change = 0.0f64;
                let delta0 = -(g0 + h0 * d0 + cd) / h0;
                if delta0 != 0.0 {
                    d0 += delta0;
                    max_change = max_change.max(h0 * delta0 * delta0);
                }
                for a in 0..m {
                    let haa = gram[a * m + a];
                    if haa <= 0.0 {
                        continue;
                    }
                    let j = ws[a];
                    let grad = g[j] + cross[a] * d0 + gd[a];
                    let current = beta[j] + dw[a];
                    let next = soft_threshold(haa * current - grad, lambda) / haa;
                    let delta = next - current;
                    if delta != 0.0 {
                        dw[a] += delta;
                        cd += delta * cross[a];
                        for (r, gv) in gd.iter_mut().zip(&gram[a * m..(a + 1) * m]) {
                            *r += delta * gv;
                        }
                        max_change = max_change.max(haa * delta * delta);
                    }
                }
                if max_change < inner_tol {
                    break;
                }
                // CD crawls on collinear columns; an active-set solve warm
                // started from the CD iterate finishes the job exactly
                if sweep + 1 == WARM_SWEEPS {
                    let current: Vec<f64> = ws.iter().zip(&dw).map(|(&j, d)| beta[j] + d).collect();
                    let sp = SubProblem {
                        g0,
                        g: &ws.iter().map(|&j| g[j]).collect::<Vec<_>>(),
                        h0,
                        cross: &cross,
                        gram: &gram,
                        beta: &ws.iter().map(|&j| beta[j]).collect::<Vec<_>>(),
                        lambda,
                    };
                    if let Some((z0, z)) = feature_sign(&sp, d0, current) {
                        d0 = z0;
                        for (a, &j) in ws.iter().enumerate() {
                            dw[a] = z[a] - beta[j];
                        }
                        break;
                    }
                }
            }
            d.iter_mut().for_each(|v| *v = 0.0);
            u.iter_mut().for_each(|v| *v = d0);
            for (a, &j) in ws.iter().enumerate() {
                d[j] = dw[a];
                if dw[a] != 0.0 {
                    for (ui, z) in u.iter_mut().zip(&self.cols[j]) {
                        *ui += dw[a] * z;
                    }
                }
            }
            // Armijo backtracking on the penalized objective
            let l1_now = penalty(&beta);
            let trial_beta = |t: f64| -> Vec<f64> {
                beta.iter().zip(&d).map(|(b, dj)| b + t * dj).collect()
            };
            let decrease_bound =
                g0 * d0 + dot(&g, &d) + penalty(&trial_beta(1.0)) - l1_now;
            let mut t = 1.0;
            let mut accepted = false;
            while t > 1e-12 {
                let eta_t: Vec<f64> = eta.iter().zip(&u).map(|(e, ui)| e + t * ui).collect();
                let beta_t = trial_beta(t);
                let obj_t = self.mean_loss(&eta_t) + penalty(&beta_t);
                if obj_t <= objective + 1e-4 * t * decrease_bound.min(0.0) {
                    beta = beta_t;
                    b0 += t * d0;
                    eta = eta_t;
                    objective = obj_t;
                    accepted = true;
                    break;
                }
                t *= 0.5;
            }
            if !accepted {
                break;
            }
        }
        // last check in case the final step landed inside the tolerance
        if self.kkt_violation(lambda, b0, &beta) <= tol {
            return Ok(LassoFit {
                intercept: b0,
                coef: beta,
                iterations: max_iter,
            });
        }
        Err(LearnError::LassoNoConvergence {
            lambda,
            iterations: max_iter,
        })
    }

    /// Solutions along a descending penalty path with warm starts.
    pub fn path(&self, lambdas: &[f64], tol: f64, max_iter: usize) -> Result<Vec<LassoFit>, LearnError> {
        let mut current = self.null_fit();
        let mut out = Vec::with_capacity(lambdas.len());
        for &lambda in lambdas {
            current = self.solve(lambda, &current, tol, max_iter)?;
            out.push(current.clone());
        }
        Ok(out)
    }

    /// Intercept-only fit at the base-rate log-odds.
    pub fn null_fit(&self) -> LassoFit {
        let ybar = self.y.iter().map(|&v| f64::from(v)).sum::<f64>() / self.n();
        let ybar = ybar.clamp(1e-12, 1.0 - 1e-12);
        LassoFit {
            intercept: (ybar / (1.0 - ybar)).ln(),
            coef: vec![0.0; self.cols.len()],
            iterations: 0,
        }
    }
}

/// Quadratic model of the penalized loss around the current iterate,
/// restricted to a working set. `beta` holds the current coefficients.
struct SubProblem<'a> {
    g0: f64,
    g: &'a [f64],
    h0: f64,
    cross: &'a [f64],
    gram: &'a [f64],
    beta: &'a [f64],
    lambda: f64,
}

impl SubProblem<'_> {
    fn m(&self) -> usize {
        self.beta.len()
    }

    fn step(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(self.beta).map(|(x, b)| x - b).collect()
    }

    /// Model value at intercept step `d0` and coefficients `x`.
    fn value(&self, d0: f64, x: &[f64]) -> f64 {
        let m = self.m();
        let dw = self.step(x);
        let quad: f64 = (0..m).map(|a| dw[a] * dot(&self.gram[a * m..(a + 1) * m], &dw)).sum();
        self.g0 * d0
            + dot(self.g, &dw)
            + 0.5 * (self.h0 * d0 * d0 + 2.0 * d0 * dot(self.cross, &dw) + quad)
            + self.lambda * x.iter().map(|v| v.abs()).sum::<f64>()
    }

    fn smooth_gradient(&self, d0: f64, x: &[f64], a: usize) -> f64 {
        let m = self.m();
        let dw = self.step(x);
        self.g[a] + self.cross[a] * d0 + dot(&self.gram[a * m..(a + 1) * m], &dw)
    }

    /// Minimizer with coefficients outside `signs` held at zero and the
    /// others carrying the given signs in the penalty.
    fn solve_signed(&self, signs: &[f64]) -> Option<(f64, Vec<f64>)> {
        let m = self.m();
        let support: Vec<usize> = (0..m).filter(|&a| signs[a] != 0.0).collect();
        let q = support.len() + 1;
        let mut mat = vec![0.0; q * q];
        let mut rhs = vec![0.0; q];
        mat[0] = self.h0;
        rhs[0] = -(self.g0 - dot(self.cross, self.beta));
        for (r, &a) in support.iter().enumerate() {
            let row = &self.gram[a * m..(a + 1) * m];
            mat[r + 1] = self.cross[a];
            mat[(r + 1) * q] = self.cross[a];
            for (c, &b) in support.iter().enumerate() {
                mat[(r + 1) * q + c + 1] = row[b];
            }
            rhs[r + 1] = -(self.g[a] - dot(row, self.beta) + self.lambda * signs[a]);
        }
        let sol = cholesky_solve(&mut mat, &mut rhs, q)?;
        let mut x = vec![0.0; m];
        for (r, &a) in support.iter().enumerate() {
            x[a] = sol[r + 1];
        }
        Some((sol[0], x))
    }
}

/// Feature-sign search (Lee, Battle, Raina and Ng) on the subproblem,
/// started from `(d0, x)`. `None` if a reduced system is singular or the
/// search does not finish.
fn feature_sign(sp: &SubProblem, mut d0: f64, mut x: Vec<f64>) -> Option<(f64, Vec<f64>)> {
    let m = sp.m();
    let slack = sp.lambda * 1e-10;
    let mut signs: Vec<f64> = x.iter().map(|v| if *v == 0.0 { 0.0 } else { v.signum() }).collect();
    for _ in 0..(20 * m + 50) {
        let (t0, target) = sp.solve_signed(&signs)?;
        if (0..m).all(|a| target[a] * signs[a] > 0.0 || signs[a] == 0.0) {
            d0 = t0;
            x = target;
            // optimal on the active set; look for a zero coefficient to release
            let mut worst = None;
            let mut worst_excess = slack;
            for a in (0..m).filter(|&a| signs[a] == 0.0) {
                let grad = sp.smooth_gradient(d0, &x, a);
                if grad.abs() - sp.lambda > worst_excess {
                    worst_excess = grad.abs() - sp.lambda;
                    worst = Some((a, -grad.signum()));
                }
            }
            match worst {
                Some((a, s)) => signs[a] = s,
                None => return Some((d0, x)),
            }
            continue;
        }
        // walk toward the target, stopping at the best sign change
        let crossing = |a: usize| -> Option<f64> {
            (x[a] != 0.0 && target[a] * x[a] <= 0.0).then(|| x[a] / (x[a] - target[a]))
        };
        let mut best = (sp.value(t0, &target), 1.0);
        for a in 0..m {
            if let Some(t) = crossing(a) {
                let xt: Vec<f64> = x.iter().zip(&target).map(|(u, v)| u + t * (v - u)).collect();
                let v = sp.value(d0 + t * (t0 - d0), &xt);
                if v < best.0 {
                    best = (v, t);
                }
            }
        }
        let t = best.1;
        let zeroed: Vec<usize> = (0..m).filter(|&a| crossing(a) == Some(t)).collect();
        d0 += t * (t0 - d0);
        for a in 0..m {
            x[a] += t * (target[a] - x[a]);
        }
        for a in zeroed {
            x[a] = 0.0;
        }
        for a in 0..m {
            signs[a] = if x[a] == 0.0 { 0.0 } else { x[a].signum() };
        }
    }
    None
}

/// In-place Cholesky solve of a symmetric `q`-by-`q` system; `None` when
/// the matrix is not numerically positive definite.
fn cholesky_solve(mat: &mut [f64], rhs: &mut [f64], q: usize) -> Option<Vec<f64>> {
    let scale = (0..q).map(|i| mat[i * q + i]).fold(0.0f64, f64::max);
    for j in 0..q {
        let mut diag = mat[j * q + j];
        for k in 0..j {
            diag -= mat[j * q + k] * mat[j * q + k];
        }
        if !(diag > 1e-12 * scale) {
            return None;
        }
        let l = diag.sqrt();
        mat[j * q + j] = l;
        for i in j + 1..q {
            let mut v = mat[i * q + j];
            for k in 0..j {
                v -= mat[i * q + k] * mat[j * q + k];
            }
            mat[i * q + j] = v / l;
        }
    }
    for i in 0..q {
        let mut v = rhs[i];
        for k in 0..i {
            v -= mat[i * q + k] * rhs[k];
        }
        rhs[i] = v / mat[i * q + i];
    }
    for i in (0..q).rev() {
        let mut v = rhs[i];
        for k in i + 1..q {
            v -= mat[k * q + i] * rhs[k];
        }
        rhs[i] = v / mat[i * q + i];
    }
    Some(rhs.to_vec())
}

fn kkt(lambda: f64, g0: f64, g: &[f64], beta: &[f64]) -> f64 {
    g.iter().zip(beta).fold(g0.abs(), |acc, (&gj, &bj)| {
        let v = if bj == 0.0 {
            (gj.abs() - lambda).max(0.0)
        } else {
            (gj + lambda * bj.signum()).abs()
        };
        acc.max(v)
    })
}

/// Descending log-spaced grid from `lambda_max` down to `ratio * lambda_max`.
pub fn lambda_grid(lambda_max: f64, n: usize, ratio: f64) -> Vec<f64> {
    let top = if lambda_max > 0.0 { lambda_max } else { 1e-3 };
    if n <= 1 {
        return vec![top];
    }
    let (hi, lo) = (top.ln(), (top * ratio).ln());
    (0..n)
        .map(|i| (hi + (lo - hi) * i as f64 / (n - 1) as f64).exp())
        .collect()
}

fn check_grid(grid: &[f64]) -> Result<(), LearnError> {
    let ok = !grid.is_empty()
        && grid.iter().all(|l| l.is_finite() && *l > 0.0)
        && grid.windows(2).all(|w| w[0] > w[1]);
    if ok {
        Ok(())
    } else {
        Err(LearnError::InvalidData(
            "lambda grid must be non-empty, strictly positive and strictly descending".into(),
        ))
    }
}

/// Fits at a single penalty without cross-validation.
pub fn fit_lasso_at(train: &TrainMatrix, lambda: f64, spec: &LassoSpec) -> Result<LassoModel, LearnError> {
    let standardizer = Standardizer::fit(train.x());
    let z = standardizer.transform(train.x());
    let problem = LassoProblem::new(&z, train.y());
    let grid = grid_for(&problem, spec)?;
    let mut path: Vec<f64> = grid.iter().copied().filter(|&l| l > lambda).collect();
    path.push(lambda);
    let fit = problem
        .path(&path, spec.tol, spec.max_iter)?
        .pop()
        .expect("non-empty path");
    Ok(LassoModel {
        standardizer,
        intercept: fit.intercept,
        coef: fit.coef,
        lambda,
        lambda_grid: vec![lambda],
        cv_mse: Vec::new(),
        seed: 0,
    })
}

fn grid_for(problem: &LassoProblem<'_>, spec: &LassoSpec) -> Result<Vec<f64>, LearnError> {
    let grid = if spec.lambdas.is_empty() {
        lambda_grid(problem.lambda_max(), spec.n_lambda.max(1), spec.lambda_min_ratio)
    } else {
        spec.lambdas.clone()
    };
    check_grid(&grid)?;
    Ok(grid)
}

/// Cross-validated lasso-logit.
pub fn fit_lasso_logit(train: &TrainMatrix, spec: &LassoSpec, seed: u64) -> Result<Model, LearnError> {
    Ok(Model::LassoLogit(fit_lasso_model(train, spec, seed)?))
}

pub(crate) fn fit_lasso_model(
    train: &TrainMatrix,
    spec: &LassoSpec,
    seed: u64,
) -> Result<LassoModel, LearnError> {
    if !train.has_both_classes() {
        return Err(LearnError::InvalidData("lasso needs both classes".into()));
    }
    let standardizer = Standardizer::fit(train.x());
    let z = standardizer.transform(train.x());
    let problem = LassoProblem::new(&z, train.y());
    let grid = grid_for(&problem, spec)?;

    let minority = train.positives().min(train.n_obs() - train.positives());
    let folds = spec.cv_folds.min(minority);
    let (best, cv_mse) = if folds >= 2 && grid.len() > 1 {
        let assignment = stratified_folds(train.y(), folds, &mut rng_from_seed(seed));
        let per_fold: Vec<Vec<f64>> = (0..folds)
            .into_par_iter()
            .map(|f| {
                let (tr, held) = fold_split(&assignment, f);
                let sub = train.subset(&tr);
                let st = Standardizer::fit(sub.x());
                let zt = st.transform(sub.x());
                let fits = LassoProblem::new(&zt, sub.y()).path(&grid, spec.tol, spec.max_iter)?;
                let zh = st.transform(&train.x().select_rows(&held));
                // summed squared error per grid value
                Ok(fits
                    .iter()
                    .map(|fit| {
                        held.iter()
                            .enumerate()
                            .map(|(r, &i)| {
                                let p = sigmoid(fit.intercept + dot(&fit.coef, zh.row(r)));
                                (p - f64::from(train.y()[i])).powi(2)
                            })
                            .sum::<f64>()
                    })
                    .collect())
            })
            .collect::<Result<_, LearnError>>()?;
        let n = train.n_obs() as f64;
        let mse: Vec<f64> = (0..grid.len())
            .map(|l| per_fold.iter().map(|f| f[l]).sum::<f64>() / n)
            .collect();
        // first minimum on the descending grid, i.e. the largest penalty among ties
        let best = mse
            .iter()
            .enumerate()
            .fold(0, |b, (i, &v)| if v < mse[b] { i } else { b });
        (best, mse)
    } else {
        (0, Vec::new())
    };

    let fit = problem
        .path(&grid[..=best], spec.tol, spec.max_iter)?
        .pop()
        .expect("non-empty path");
    Ok(LassoModel {
        standardizer,
        intercept: fit.intercept,
        coef: fit.coef,
        lambda: grid[best],
        lambda_grid: grid,
        cv_mse,
        seed,
    })
}
