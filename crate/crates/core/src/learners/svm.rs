//! Soft-margin SVM with an RBF kernel, solved by sequential minimal
//! optimization (maximal-violating pair with second-order working set
//! selection). Probabilities come from a sigmoid fitted to the training
//! decision values.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fold_split, stratified_folds, LearnError, Matrix, Model, Standardizer, TrainMatrix};
use crate::rng::rng_from_seed;

const TAU: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvmSpec {
    pub c_grid: Vec<f64>,
    /// The kernel width is `gamma = scale / p` for each scale listed.
    pub gamma_scales: Vec<f64>,
    pub cv_folds: usize,
    /// KKT tolerance of the solver.
    pub tol: f64,
    /// Solver iteration cap; `0` means `max(100_000, 100 * n)`.
    pub max_iter: usize,
}

impl Default for SvmSpec {
    fn default() -> Self {
        Self {
            c_grid: vec![0.1, 1.0, 10.0, 100.0],
            gamma_scales: vec![0.25, 1.0, 4.0],
            cv_folds: 5,
            tol: 1e-3,
            max_iter: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub standardizer: Standardizer,
    /// Standardized support vectors.
    pub support: Matrix,
    /// `alpha_i * y_i` per support vector.
    pub coef: Vec<f64>,
    pub rho: f64,
    pub gamma: f64,
    pub c: f64,
    pub platt_a: f64,
    pub platt_b: f64,
    /// Cross-validated accuracy per (C, gamma) grid cell, C-major.
    pub cv_accuracy: Vec<f64>,
}

impl SvmModel {
    pub fn n_features(&self) -> usize {
        self.standardizer.mean.len()
    }

    pub fn decision_value(&self, row: &[f64]) -> f64 {
        let mut z = row.to_vec();
        self.standardizer.transform_row_in_place(&mut z);
        (0..self.support.rows())
            .map(|i| self.coef[i] * rbf(self.support.row(i), &z, self.gamma))
            .sum::<f64>()
            - self.rho
    }

    pub(crate) fn proba_row(&self, row: &[f64]) -> f64 {
        platt_probability(self.decision_value(row), self.platt_a, self.platt_b)
    }
}

fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    (-gamma * d2).exp()
}

fn gram(z: &Matrix, gamma: f64) -> Vec<f64> {
    let n = z.rows();
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        k[i * n + i] = 1.0;
        for j in 0..i {
            let v = rbf(z.row(i), z.row(j), gamma);
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
    }
    k
}

/// Dual solution on the rows `idx` of a precomputed kernel.
struct DualSolution {
    alpha: Vec<f64>,
    rho: f64,
}

/// Solves `min 0.5 a'Qa - e'a` s.t. `0 <= a <= C`, `y'a = 0`.
fn smo(
    kernel: &[f64],
    n_all: usize,
    idx: &[usize],
    y: &[f64],
    c: f64,
    tol: f64,
    max_iter: usize,
) -> Result<DualSolution, LearnError> {
    let n = idx.len();
    let k = |a: usize, b: usize| kernel[idx[a] * n_all + idx[b]];
    let mut alpha = vec![0.0; n];
    let mut grad = vec![-1.0; n];
    let upper = |a: f64| a >= c;
    let lower = |a: f64| a <= 0.0;
    let cap = if max_iter == 0 { (100 * n).max(100_000) } else { max_iter };
    let mut converged = false;
    for _ in 0..cap {
        let mut gmax = f64::NEG_INFINITY;
        let mut i = usize::MAX;
        for t in 0..n {
            let eligible = if y[t] > 0.0 { !upper(alpha[t]) } else { !lower(alpha[t]) };
            if eligible && -y[t] * grad[t] >= gmax {
                gmax = -y[t] * grad[t];
                i = t;
            }
        }
        if i == usize::MAX {
            converged = true;
            break;
        }
        let mut gmax2 = f64::NEG_INFINITY;
        let mut j = usize::MAX;
        let mut best = f64::INFINITY;
        for t in 0..n {
            let eligible = if y[t] > 0.0 { !lower(alpha[t]) } else { !upper(alpha[t]) };
            if !eligible {
                continue;
            }
            let v = y[t] * grad[t];
            gmax2 = gmax2.max(v);
            let diff = gmax + v;
            if diff > 0.0 {
                let quad = k(i, i) + k(t, t) - 2.0 * k(i, t);
                let obj = -(diff * diff) / if quad > 0.0 { quad } else { TAU };
                if obj <= best {
                    best = obj;
                    j = t;
                }
            }
        }
        if gmax + gmax2 < tol || j == usize::MAX {
            converged = true;
            break;
        }
        let (old_i, old_j) = (alpha[i], alpha[j]);
        let qij = y[i] * y[j] * k(i, j);
        if y[i] != y[j] {
            let quad = (k(i, i) + k(j, j) + 2.0 * qij).max(TAU);
            let delta = (-grad[i] - grad[j]) / quad;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > 0.0 {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = c - diff;
                }
            } else if alpha[j] > c {
                alpha[j] = c;
                alpha[i] = c + diff;
            }
        } else {
            let quad = (k(i, i) + k(j, j) - 2.0 * qij).max(TAU);
            let delta = (grad[i] - grad[j]) / quad;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > c {
                if alpha[i] > c {
                    alpha[i] = c;
                    alpha[j] = sum - c;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > c {
                if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = sum - c;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        let (di, dj) = (alpha[i] - old_i, alpha[j] - old_j);
        for t in 0..n {
            grad[t] += y[t] * (y[i] * k(i, t) * di + y[j] * k(j, t) * dj);
        }
    }
    if !converged {
        return Err(LearnError::SvmNoConvergence(cap));
    }
    // offset from free vectors, or the midpoint of the feasible interval
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut n_free, mut sum_free) = (0usize, 0.0);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if upper(alpha[t]) {
            if y[t] < 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else if lower(alpha[t]) {
            if y[t] > 0.0 { ub = ub.min(yg) } else { lb = lb.max(yg) }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };
    Ok(DualSolution { alpha, rho })
}

fn signed(y: &[u8]) -> Vec<f64> {
    y.iter().map(|&v| if v == 1 { 1.0 } else { -1.0 }).collect()
}

/// Decision values of a dual solution (trained on rows `train`) at rows `at`.
fn decisions(kernel: &[f64], n_all: usize, train: &[usize], ys: &[f64], sol: &DualSolution, at: &[usize]) -> Vec<f64> {
    at.iter()
        .map(|&r| {
            train
                .iter()
                .zip(&sol.alpha)
                .zip(ys)
                .filter(|((_, a), _)| **a > 0.0)
                .map(|((&s, a), y)| a * y * kernel[s * n_all + r])
                .sum::<f64>()
                - sol.rho
        })
        .collect()
}

pub fn platt_probability(f: f64, a: f64, b: f64) -> f64 {
    let z = f * a + b;
    if z >= 0.0 {
        (-z).exp() / (1.0 + (-z).exp())
    } else {
        1.0 / (1.0 + z.exp())
    }
}

/// Fits `P(y = 1 | f) = 1 / (1 + exp(A f + B))` by regularized maximum
/// likelihood (Newton's method with backtracking).
pub fn fit_platt(dec: &[f64], y: &[u8]) -> (f64, f64) {
    let prior1 = y.iter().filter(|&&v| v == 1).count() as f64;
    let prior0 = y.len() as f64 - prior1;
    let hi = (prior1 + 1.0) / (prior1 + 2.0);
    let lo = 1.0 / (prior0 + 2.0);
    let t: Vec<f64> = y.iter().map(|&v| if v == 1 { hi } else { lo }).collect();
    let (min_step, sigma, eps) = (1e-10, 1e-12, 1e-5);
    let mut a = 0.0;
    let mut b = ((prior0 + 1.0) / (prior1 + 1.0)).ln();
    let objective = |a: f64, b: f64| -> f64 {
        dec.iter()
            .zip(&t)
            .map(|(&f, &ti)| {
                let z = f * a + b;
                if z >= 0.0 {
                    ti * z + (-z).exp().ln_1p()
                } else {
                    (ti - 1.0) * z + z.exp().ln_1p()
                }
            })
            .sum()
    };
    let mut fval = objective(a, b);
    for _ in 0..100 {
        let (mut h11, mut h22, mut h21, mut g1, mut g2) = (sigma, sigma, 0.0, 0.0, 0.0);
        for (&f, &ti) in dec.iter().zip(&t) {
            let z = f * a + b;
            let (p, q) = if z >= 0.0 {
                ((-z).exp() / (1.0 + (-z).exp()), 1.0 / (1.0 + (-z).exp()))
            } else {
                (1.0 / (1.0 + z.exp()), z.exp() / (1.0 + z.exp()))
            };
            let d2 = p * q;
            h11 += f * f * d2;
            h22 += d2;
            h21 += f * d2;
            let d1 = ti - p;
            g1 += f * d1;
            g2 += d1;
        }
        if g1.abs() < eps && g2.abs() < eps {
            break;
        }
        let det = h11 * h22 - h21 * h21;
        let da = -(h22 * g1 - h21 * g2) / det;
        let db = -(-h21 * g1 + h11 * g2) / det;
        let gd = g1 * da + g2 * db;
        let mut step = 1.0;
        while step >= min_step {
            let (na, nb) = (a + step * da, b + step * db);
            let nf = objective(na, nb);
            if nf < fval + 1e-4 * step * gd {
                a = na;
                b = nb;
                fval = nf;
                break;
            }
            step /= 2.0;
        }
        if step < min_step {
            break;
        }
    }
    (a, b)
}

pub fn fit_svm(train: &TrainMatrix, spec: &SvmSpec, seed: u64) -> Result<Model, LearnError> {
    Ok(Model::Svm(fit_svm_model(train, spec, seed)?))
}

pub(crate) fn fit_svm_model(train: &TrainMatrix, spec: &SvmSpec, seed: u64) -> Result<SvmModel, LearnError> {
    if spec.c_grid.is_empty() || spec.gamma_scales.is_empty() {
        return Err(LearnError::InvalidData("SVM grid is empty".into()));
    }
    if spec.c_grid.iter().chain(&spec.gamma_scales).any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(LearnError::InvalidData("SVM grid values must be positive".into()));
    }
    let standardizer = Standardizer::fit(train.x());
    let z = standardizer.transform(train.x());
    let n = train.n_obs();
    let p = train.n_features().max(1) as f64;
    let ys = signed(train.y());
    let all: Vec<usize> = (0..n).collect();
    let gammas: Vec<f64> = spec.gamma_scales.iter().map(|s| s / p).collect();
    let kernels: Vec<Vec<f64>> = gammas.par_iter().map(|&g| gram(&z, g)).collect();

    let cells: Vec<(usize, usize)> = (0..spec.c_grid.len())
        .flat_map(|ci| (0..gammas.len()).map(move |gi| (ci, gi)))
        .collect();
    let minority = train.positives().min(n - train.positives());
    let folds = spec.cv_folds.min(minority);
    let cv_accuracy: Vec<f64> = if cells.len() > 1 && folds >= 2 {
        let assignment = stratified_folds(train.y(), folds, &mut rng_from_seed(seed));
        cells
            .par_iter()
            .map(|&(ci, gi)| {
                let mut correct = 0usize;
                for f in 0..folds {
                    let (tr, held) = fold_split(&assignment, f);
                    let ytr: Vec<f64> = tr.iter().map(|&i| ys[i]).collect();
                    let sol = smo(&kernels[gi], n, &tr, &ytr, spec.c_grid[ci], spec.tol, spec.max_iter)?;
                    let dec = decisions(&kernels[gi], n, &tr, &ytr, &sol, &held);
                    correct += held
                        .iter()
                        .zip(&dec)
                        .filter(|(&i, &d)| (d > 0.0) == (ys[i] > 0.0))
                        .count();
                }
                Ok(correct as f64 / n as f64)
            })
            .collect::<Result<_, LearnError>>()?
    } else {
        Vec::new()
    };
    // first best cell in C-major grid order
    let best = cv_accuracy
        .iter()
        .enumerate()
        .fold(0, |b, (i, &v)| if v > cv_accuracy[b] { i } else { b });
    let (ci, gi) = cells[best];
    let sol = smo(&kernels[gi], n, &all, &ys, spec.c_grid[ci], spec.tol, spec.max_iter)?;
    let dec = decisions(&kernels[gi], n, &all, &ys, &sol, &all);
    let (platt_a, platt_b) = fit_platt(&dec, train.y());

    let sv: Vec<usize> = (0..n).filter(|&i| sol.alpha[i] > 0.0).collect();
    Ok(SvmModel {
        standardizer,
        support: z.select_rows(&sv),
        coef: sv.iter().map(|&i| sol.alpha[i] * ys[i]).collect(),
        rho: sol.rho,
        gamma: gammas[gi],
        c: spec.c_grid[ci],
        platt_a,
        platt_b,
        cv_accuracy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::testdata::{accuracy, blobs, names};

    fn fixed(c: f64, gamma_scale: f64) -> SvmSpec {
        SvmSpec {
            c_grid: vec![c],
            gamma_scales: vec![gamma_scale],
            ..SvmSpec::default()
        }
    }

    #[test]
    fn separable_data_large_c_has_no_training_errors() {
        let rows = [
            [0.0, 0.0], [0.5, 1.0], [1.0, 0.3], [0.2, 1.5], [1.2, 1.0],
            [3.0, 3.0], [3.5, 2.2], [2.8, 4.0], [4.0, 3.1], [3.3, 3.9],
        ];
        let y = vec![0, 0, 0, 0, 0, 1, 1, 1, 1, 1];
        let data = TrainMatrix::new(Matrix::from_rows(&rows), y, names(2)).unwrap();
        let model = fit_svm(&data, &fixed(1000.0, 1.0), 0).unwrap();
        assert_eq!(accuracy(&model, &data), 1.0);
        let Model::Svm(m) = &model else { unreachable!() };
        for i in 0..data.n_obs() {
            let f = m.decision_value(data.x().row(i));
            assert_eq!(f > 0.0, data.y()[i] == 1);
        }
    }

    #[test]
    fn contradictory_duplicate_cannot_be_separated() {
        let data = TrainMatrix::new(Matrix::from_rows(&[[1.0, 2.0], [1.0, 2.0]]), vec![0, 1], names(2)).unwrap();
        let model = fit_svm(&data, &SvmSpec::default(), 0).unwrap();
        assert_eq!(accuracy(&model, &data), 0.5);
    }

    #[test]
    fn feature_scaling_is_absorbed() {
        let data = blobs(25, 3, 1.5, 1.0, 6);
        let mut scaled = data.x().clone();
        for i in 0..scaled.rows() {
            let v = scaled.get(i, 1);
            scaled.set(i, 1, v * 1000.0);
        }
        let data2 = TrainMatrix::new(scaled.clone(), data.y().to_vec(), names(3)).unwrap();
        let a = fit_svm(&data, &SvmSpec::default(), 3).unwrap();
        let b = fit_svm(&data2, &SvmSpec::default(), 3).unwrap();
        let pa = a.predict_proba(data.x()).unwrap();
        let pb = b.predict_proba(&scaled).unwrap();
        for (x, y) in pa.iter().zip(&pb) {
            assert!((x - y).abs() < 1e-6, "{x} vs {y}");
        }
    }

    #[test]
    fn grid_search_and_probabilities() {
        let data = blobs(40, 4, 2.0, 1.0, 8);
        let model = fit_svm(&data, &SvmSpec::default(), 1).unwrap();
        let Model::Svm(m) = &model else { unreachable!() };
        assert_eq!(m.cv_accuracy.len(), 12);
        let probs = model.predict_proba(data.x()).unwrap();
        assert!(probs.iter().all(|p| (0.0..=1.0).contains(p)));
        assert!(accuracy(&model, &data) > 0.85);
        assert_eq!(model, fit_svm(&data, &SvmSpec::default(), 1).unwrap());
    }

    #[test]
    fn dual_solution_is_feasible_and_kkt() {
        let data = blobs(30, 2, 1.0, 1.0, 2);
        let z = Standardizer::fit(data.x()).transform(data.x());
        let k = gram(&z, 0.5);
        let n = data.n_obs();
        let ys = signed(data.y());
        let idx: Vec<usize> = (0..n).collect();
        let c = 2.0;
        let sol = smo(&k, n, &idx, &ys, c, 1e-3, 0).unwrap();
        let balance: f64 = sol.alpha.iter().zip(&ys).map(|(a, y)| a * y).sum();
        assert!(balance.abs() < 1e-9);
        assert!(sol.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
        let dec = decisions(&k, n, &idx, &ys, &sol, &idx);
        for i in 0..n {
            let margin = ys[i] * dec[i];
            if sol.alpha[i] == 0.0 {
                assert!(margin >= 1.0 - 2e-3);
            } else if sol.alpha[i] >= c {
                assert!(margin <= 1.0 + 2e-3);
            } else {
                assert!((margin - 1.0).abs() <= 2e-3);
            }
        }
    }

    #[test]
    fn platt_is_monotone_in_decision_value() {
        let dec = [-2.0, -1.0, -0.5, 0.3, 1.0, 2.0];
        let y = [0, 0, 1, 0, 1, 1];
        let (a, b) = fit_platt(&dec, &y);
        assert!(a < 0.0);
        let p: Vec<f64> = dec.iter().map(|&f| platt_probability(f, a, b)).collect();
        assert!(p.windows(2).all(|w| w[0] < w[1]));
    }
}
