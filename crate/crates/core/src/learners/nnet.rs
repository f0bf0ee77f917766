//! Single-hidden-layer network with sigmoid units and a logistic output,
//! trained by full-batch Adam on the mean logistic loss plus weight decay.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{log1p_exp, sigmoid, LearnError, Matrix, Model, Standardizer, TrainMatrix};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NnetSpec {
    pub hidden: usize,
    /// Penalty `decay / 2 * sum(w^2)` over weights (not biases).
    pub decay: f64,
    pub epochs: usize,
    pub step: f64,
    /// Initial weights are uniform on `[-init_range, init_range]`.
    pub init_range: f64,
}

impl Default for NnetSpec {
    fn default() -> Self {
        Self {
            hidden: 8,
            decay: 1e-3,
            epochs: 1000,
            step: 0.05,
            init_range: 0.5,
        }
    }
}

/// Flat parameter layout: `w1` (hidden x p, row-major), `b1` (hidden),
/// `w2` (hidden), `b2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub p: usize,
    pub hidden: usize,
}

impl Layout {
    pub fn len(&self) -> usize {
        self.hidden * self.p + 2 * self.hidden + 1
    }

    fn b1(&self) -> usize {
        self.hidden * self.p
    }

    fn w2(&self) -> usize {
        self.b1() + self.hidden
    }

    fn b2(&self) -> usize {
        self.w2() + self.hidden
    }

    fn is_weight(&self, k: usize) -> bool {
        k < self.b1() || (self.w2()..self.b2()).contains(&k)
    }

    /// Output score (pre-sigmoid) and hidden activations for one input.
    fn forward(&self, theta: &[f64], z: &[f64], hidden: &mut [f64]) -> f64 {
        let mut out = theta[self.b2()];
        for h in 0..self.hidden {
            let w = &theta[h * self.p..(h + 1) * self.p];
            let a = theta[self.b1() + h] + w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>();
            hidden[h] = sigmoid(a);
            out += theta[self.w2() + h] * hidden[h];
        }
        out
    }
}

/// Objective and its gradient at `theta` on standardized inputs `z`.
pub fn loss_and_gradient(layout: Layout, theta: &[f64], z: &Matrix, y: &[u8], decay: f64) -> (f64, Vec<f64>) {
    let n = z.rows() as f64;
    let mut grad = vec![0.0; layout.len()];
    let mut hidden = vec![0.0; layout.hidden];
    let mut loss = 0.0;
    for i in 0..z.rows() {
        let row = z.row(i);
        let s = layout.forward(theta, row, &mut hidden);
        let t = f64::from(y[i]);
        loss += log1p_exp(s) - t * s;
        let d = (sigmoid(s) - t) / n;
        grad[layout.b2()] += d;
        for h in 0..layout.hidden {
            grad[layout.w2() + h] += d * hidden[h];
            let dh = d * theta[layout.w2() + h] * hidden[h] * (1.0 - hidden[h]);
            grad[layout.b1() + h] += dh;
            for (g, v) in grad[h * layout.p..(h + 1) * layout.p].iter_mut().zip(row) {
                *g += dh * v;
            }
        }
    }
    loss /= n;
    for k in 0..layout.len() {
        if layout.is_weight(k) {
            loss += 0.5 * decay * theta[k] * theta[k];
            grad[k] += decay * theta[k];
        }
    }
    (loss, grad)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NnetModel {
    pub standardizer: Standardizer,
    pub hidden: usize,
    pub theta: Vec<f64>,
    pub final_loss: f64,
    pub seed: u64,
}

impl NnetModel {
    pub fn n_features(&self) -> usize {
        self.standardizer.mean.len()
    }

    fn layout(&self) -> Layout {
        Layout { p: self.n_features(), hidden: self.hidden }
    }

    pub(crate) fn proba_row(&self, row: &[f64]) -> f64 {
        let mut z = row.to_vec();
        self.standardizer.transform_row_in_place(&mut z);
        let mut h = vec![0.0; self.hidden];
        sigmoid(self.layout().forward(&self.theta, &z, &mut h))
    }
}

/// Single-class training data is accepted and yields a near-constant model.
pub fn fit_nnet(train: &TrainMatrix, spec: &NnetSpec, seed: u64) -> Result<Model, LearnError> {
    Ok(Model::Nnet(fit_nnet_model(train, spec, seed)?))
}

pub(crate) fn fit_nnet_model(train: &TrainMatrix, spec: &NnetSpec, seed: u64) -> Result<NnetModel, LearnError> {
    if spec.hidden == 0 {
        return Err(LearnError::InvalidData("network needs at least one hidden unit".into()));
    }
    if !(spec.step > 0.0 && spec.step.is_finite() && spec.decay >= 0.0) {
        return Err(LearnError::InvalidData("step must be positive and decay non-negative".into()));
    }
    let standardizer = Standardizer::fit(train.x());
    let z = standardizer.transform(train.x());
    let layout = Layout { p: train.n_features(), hidden: spec.hidden };
    let mut rng = rng_from_seed(seed);
    let r = spec.init_range;
    let mut theta: Vec<f64> = (0..layout.len()).map(|_| rng.random_range(-r..=r)).collect();

    let (beta1, beta2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    for epoch in 1..=spec.epochs {
        let (l, g) = loss_and_gradient(layout, &theta, &z, train.y(), spec.decay);
        if !l.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(LearnError::NnetDiverged { epoch, step: spec.step });
        }
        let c1 = 1.0 - beta1.powi(epoch as i32);
        let c2 = 1.0 - beta2.powi(epoch as i32);
        for k in 0..theta.len() {
            m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
            v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
            theta[k] -= spec.step * (m[k] / c1) / ((v[k] / c2).sqrt() + eps);
        }
    }
    let (final_loss, _) = loss_and_gradient(layout, &theta, &z, train.y(), spec.decay);
    if !final_loss.is_finite() {
        return Err(LearnError::NnetDiverged { epoch: spec.epochs, step: spec.step });
    }
    Ok(NnetModel {
        standardizer,
        hidden: spec.hidden,
        theta,
        final_loss,
        seed,
    })
}

/// Largest relative difference between the analytic gradient and
/// central finite differences.
pub fn gradient_check(layout: Layout, theta: &[f64], z: &Matrix, y: &[u8], decay: f64) -> f64 {
    let (_, g) = loss_and_gradient(layout, theta, z, y, decay);
    let h = 1e-5;
    let mut worst = 0.0f64;
    for k in 0..theta.len() {
        let mut up = theta.to_vec();
        let mut down = theta.to_vec();
        up[k] += h;
        down[k] -= h;
        let numeric = (loss_and_gradient(layout, &up, z, y, decay).0
            - loss_and_gradient(layout, &down, z, y, decay).0)
            / (2.0 * h);
        let rel = (g[k] - numeric).abs() / g[k].abs().max(numeric.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    worst
}
