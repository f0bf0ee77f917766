//! Stacked ensemble. Each base learner is cross-fitted to get out-of-fold
//! probabilities; convex weights minimizing the squared error of the
//! combined out-of-fold probabilities are then applied to base learners
//! refitted on all training rows.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::simplex::{simplex_least_squares, squared_error};
use super::{
    fit_forest, fit_gbm, fit_lasso_logit, fit_nnet, fold_split, stratified_folds, ForestSpec, GbmSpec,
    LassoSpec, LearnError, Model, NnetSpec, TrainMatrix,
};
use crate::rng::{derive_seed, rng_from_seed};

pub const BASE_LEARNERS: [&str; 4] = ["gbm", "forest", "lasso_logit", "nnet"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuperLearnerSpec {
    pub folds: usize,
    pub gbm: GbmSpec,
    pub forest: ForestSpec,
    pub lasso: LassoSpec,
    pub nnet: NnetSpec,
}

impl Default for SuperLearnerSpec {
    fn default() -> Self {
        Self {
            folds: 10,
            gbm: GbmSpec::default(),
            forest: ForestSpec { n_trees: 500, ..ForestSpec::default() },
            lasso: LassoSpec { cv_folds: 10, ..LassoSpec::default() },
            nnet: NnetSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuperLearnerModel {
    /// Base learners refitted on all rows, in [`BASE_LEARNERS`] order.
    pub base: Vec<Model>,
    pub weights: Vec<f64>,
    /// Mean squared error of each base learner's out-of-fold probabilities.
    pub base_risk: Vec<f64>,
    /// Mean squared error of the weighted out-of-fold probabilities.
    pub ensemble_risk: f64,
    pub seed: u64,
}

impl SuperLearnerModel {
    pub fn n_features(&self) -> usize {
        self.base[0].n_features()
    }

    pub(crate) fn proba_row(&self, row: &[f64]) -> f64 {
        self.base
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(m, w)| w * m.proba_row(row).clamp(0.0, 1.0))
            .sum()
    }
}

fn fit_base(k: usize, train: &TrainMatrix, spec: &SuperLearnerSpec, seed: u64) -> Result<Model, LearnError> {
    let seed = derive_seed(seed, 1 + k as u64);
    match k {
        0 => fit_gbm(train, &spec.gbm, seed),
        1 => fit_forest(train, &spec.forest, seed),
        2 => fit_lasso_logit(train, &spec.lasso, seed),
        _ => fit_nnet(train, &spec.nnet, seed),
    }
}

/// Out-of-fold probability panel (rows x base learners).
pub fn out_of_fold_panel(train: &TrainMatrix, spec: &SuperLearnerSpec, seed: u64) -> Result<Vec<Vec<f64>>, LearnError> {
    let n = train.n_obs();
    let minority = train.positives().min(n - train.positives());
    let folds = spec.folds.min(minority);
    if folds < 2 {
        return Err(LearnError::InvalidData(
            "super learner needs at least two rows of each class".into(),
        ));
    }
    let assignment = stratified_folds(train.y(), folds, &mut rng_from_seed(derive_seed(seed, 0)));
    let jobs: Vec<(usize, usize)> = (0..folds).flat_map(|f| (0..BASE_LEARNERS.len()).map(move |k| (f, k))).collect();
    let preds: Vec<(Vec<usize>, Vec<f64>)> = jobs
        .par_iter()
        .map(|&(f, k)| {
            let (tr, held) = fold_split(&assignment, f);
            let model = fit_base(k, &train.subset(&tr), spec, derive_seed(seed, 100 + f as u64))?;
            let p = model.predict_proba(&train.x().select_rows(&held))?;
            Ok((held, p))
        })
        .collect::<Result<_, LearnError>>()?;
    let mut panel = vec![vec![0.0; BASE_LEARNERS.len()]; n];
    for (&(_, k), (held, p)) in jobs.iter().zip(preds) {
        for (i, v) in held.into_iter().zip(p) {
            panel[i][k] = v;
        }
    }
    Ok(panel)
}

pub fn fit_superlearner(train: &TrainMatrix, spec: &SuperLearnerSpec, seed: u64) -> Result<Model, LearnError> {
    Ok(Model::Super(fit_superlearner_model(train, spec, seed)?))
}

pub(crate) fn fit_superlearner_model(
    train: &TrainMatrix,
    spec: &SuperLearnerSpec,
    seed: u64,
) -> Result<SuperLearnerModel, LearnError> {
    let panel = out_of_fold_panel(train, spec, seed)?;
    let y: Vec<f64> = train.y().iter().map(|&v| f64::from(v)).collect();
    let weights = simplex_least_squares(&panel, &y);
    let n = y.len() as f64;
    let base_risk: Vec<f64> = (0..BASE_LEARNERS.len())
        .map(|k| {
            let mut e = vec![0.0; BASE_LEARNERS.len()];
            e[k] = 1.0;
            squared_error(&panel, &e, &y) / n
        })
        .collect();
    let ensemble_risk = squared_error(&panel, &weights, &y) / n;
    assert!(
        weights.iter().all(|&w| w >= 0.0) && (weights.iter().sum::<f64>() - 1.0).abs() < 1e-9,
        "meta-weights left the simplex: {weights:?}"
    );
    assert!(
        base_risk.iter().all(|&r| ensemble_risk <= r),
        "ensemble risk {ensemble_risk} exceeds a base learner's {base_risk:?}"
    );
    let base = (0..BASE_LEARNERS.len())
        .into_par_iter()
        .map(|k| fit_base(k, train, spec, derive_seed(seed, 99)))
        .collect::<Result<Vec<_>, LearnError>>()?;
    Ok(SuperLearnerModel {
        base,
        weights,
        base_risk,
        ensemble_risk,
        seed,
    })
}
