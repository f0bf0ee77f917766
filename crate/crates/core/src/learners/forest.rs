//! Random forest: bootstrap-resampled CART trees with a fresh random subset
//! of features at every split. Probability is the share of trees voting for
//! class 1.

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::tree::{grow_classification, GrowParams, Tree};
use super::{LearnError, Model, TrainMatrix};
use crate::rng::{derive_seed, rng_from_seed};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestSpec {
    pub n_trees: usize,
    /// Features tried per split; `None` means `floor(sqrt(p))`.
    pub mtry: Option<usize>,
    pub min_leaf: usize,
}

impl Default for ForestSpec {
    fn default() -> Self {
        Self {
            n_trees: 1000,
            mtry: None,
            min_leaf: 1,
        }
    }
}

/// `floor(sqrt(p))`, at least 1.
pub fn default_mtry(p: usize) -> usize {
    ((p as f64).sqrt().floor() as usize).max(1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    pub mtry: usize,
    /// Mean over trees of the total Gini decrease per feature.
    pub importance: Vec<f64>,
    pub seed: u64,
}

impl ForestModel {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn votes(&self, row: &[f64]) -> usize {
        self.trees
            .iter()
            .filter(|t| t.predict_row(row) > 0.5)
            .count()
    }

    pub(crate) fn proba_row(&self, row: &[f64]) -> f64 {
        self.votes(row) as f64 / self.trees.len() as f64
    }
}

pub fn fit_forest(train: &TrainMatrix, spec: &ForestSpec, seed: u64) -> Result<Model, LearnError> {
    Ok(Model::Forest(fit_forest_model(train, spec, seed)?))
}

pub(crate) fn fit_forest_model(
    train: &TrainMatrix,
    spec: &ForestSpec,
    seed: u64,
) -> Result<ForestModel, LearnError> {
    if spec.n_trees == 0 {
        return Err(LearnError::InvalidData("forest needs at least one tree".into()));
    }
    let p = train.n_features();
    let mtry = spec.mtry.unwrap_or_else(|| default_mtry(p)).clamp(1, p.max(1));
    let n = train.n_obs();
    let params = GrowParams {
        max_depth: None,
        min_leaf: spec.min_leaf.max(1),
        mtry: Some(mtry),
    };
    let grown: Vec<(Tree, Vec<f64>)> = (0..spec.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(seed, t as u64));
            let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
            let mut importance = vec![0.0; p];
            let tree = grow_classification(
                train.x(),
                train.y(),
                rows,
                params,
                Some(&mut rng),
                &mut importance,
            );
            (tree, importance)
        })
        .collect();
    let mut importance = vec![0.0; p];
    let mut trees = Vec::with_capacity(grown.len());
    for (tree, imp) in grown {
        for (a, b) in importance.iter_mut().zip(&imp) {
            *a += b;
        }
        trees.push(tree);
    }
    importance.iter_mut().for_each(|v| *v /= spec.n_trees as f64);
    Ok(ForestModel {
        trees,
        n_features: p,
        mtry,
        importance,
        seed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub index: usize,
    /// Relative to the most important feature (= 100).
    pub importance: f64,
}

/// Rescales raw importances so the maximum is 100 and sorts them
/// descending; ties keep feature order. All-zero input stays zero.
pub fn rank_importance(raw: &[f64], names: &[String]) -> Vec<FeatureImportance> {
    let max = raw.iter().cloned().fold(0.0f64, f64::max);
    let mut ranked: Vec<FeatureImportance> = raw
        .iter()
        .enumerate()
        .map(|(i, &v)| FeatureImportance {
            feature: names.get(i).cloned().unwrap_or_else(|| format!("x{i}")),
            index: i,
            importance: if max > 0.0 { 100.0 * v / max } else { 0.0 },
        })
        .collect();
    ranked.sort_by(|a, b| b.importance.total_cmp(&a.importance).then(a.index.cmp(&b.index)));
    ranked
}

/// Mean decrease in Gini impurity per feature, relative to the maximum.
pub fn gini_importance(model: &ForestModel, names: &[String]) -> Vec<FeatureImportance> {
    rank_importance(&model.importance, names)
}
