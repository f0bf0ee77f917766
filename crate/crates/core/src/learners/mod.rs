//! From-scratch binary classifiers with a uniform fit/predict contract.
//!
//! Every learner outputs the probability of class 1 (collusive). A hard
//! label is 1 iff that probability exceeds 0.5. Fitting is deterministic
//! given the seed, independent of the number of worker threads.

pub mod forest;
pub mod gbm;
pub mod lasso;
pub mod nnet;
pub mod simplex;
pub mod superlearner;
pub mod svm;
pub mod tree;

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use forest::{fit_forest, gini_importance, rank_importance, FeatureImportance, ForestModel, ForestSpec};
pub use gbm::{fit_gbm, GbmModel, GbmSpec};
pub use lasso::{fit_lasso_logit, LassoModel, LassoSpec};
pub use nnet::{fit_nnet, NnetModel, NnetSpec};
pub use superlearner::{fit_superlearner, SuperLearnerModel, SuperLearnerSpec};
pub use svm::{fit_svm, SvmModel, SvmSpec};
pub use tree::{fit_tree, TreeModel, TreeSpec};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("invalid training data: {0}")]
    InvalidData(String),
    #[error("model expects {expected} feature columns, got {got}")]
    ColumnMismatch { expected: usize, got: usize },
    #[error("lasso coordinate descent did not converge for lambda = {lambda:e} within {iterations} sweeps")]
    LassoNoConvergence { lambda: f64, iterations: usize },
    #[error("SVM solver exceeded {0} iterations without meeting the KKT tolerance")]
    SvmNoConvergence(usize),
    #[error("neural network loss diverged at epoch {epoch}; try a smaller step size than {step}")]
    NnetDiverged { epoch: usize, step: f64 },
    #[error("model file: {0}")]
    ModelFile(String),
}

/// Dense row-major matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data has wrong length");
        Self { rows, cols, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::new(rows, cols, vec![0.0; rows * cols])
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self::new(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn select_rows(&self, idx: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(idx.len() * self.cols);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Matrix::new(idx.len(), self.cols, data)
    }

    pub fn select_cols(&self, cols: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * cols.len());
        for i in 0..self.rows {
            let row = self.row(i);
            data.extend(cols.iter().map(|&j| row[j]));
        }
        Matrix::new(self.rows, cols.len(), data)
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Features and binary labels for fitting.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainMatrix {
    x: Matrix,
    y: Vec<u8>,
    names: Vec<String>,
}

impl TrainMatrix {
    /// Checks finiteness, labels in {0, 1}, at least two rows and both classes.
    pub fn new(x: Matrix, y: Vec<u8>, names: Vec<String>) -> Result<Self, LearnError> {
        let t = Self::new_unchecked_classes(x, y, names)?;
        if !t.has_both_classes() {
            return Err(LearnError::InvalidData("both classes must be present".into()));
        }
        Ok(t)
    }

    /// Like [`TrainMatrix::new`] but allows a single class, which several
    /// learners handle as a degenerate constant fit.
    pub fn new_unchecked_classes(
        x: Matrix,
        y: Vec<u8>,
        names: Vec<String>,
    ) -> Result<Self, LearnError> {
        if x.rows() != y.len() {
            return Err(LearnError::InvalidData(format!(
                "{} feature rows but {} labels",
                x.rows(),
                y.len()
            )));
        }
        if names.len() != x.cols() {
            return Err(LearnError::InvalidData("feature name count differs from columns".into()));
        }
        if x.rows() < 2 {
            return Err(LearnError::InvalidData("need at least two rows".into()));
        }
        if !x.is_finite() {
            return Err(LearnError::InvalidData("non-finite feature value".into()));
        }
        if y.iter().any(|&v| v > 1) {
            return Err(LearnError::InvalidData("labels must be 0 or 1".into()));
        }
        Ok(Self { x, y, names })
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &[u8] {
        &self.y
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    pub fn n_features(&self) -> usize {
        self.x.cols()
    }

    pub fn positives(&self) -> usize {
        self.y.iter().filter(|&&v| v == 1).count()
    }

    pub fn has_both_classes(&self) -> bool {
        let p = self.positives();
        p > 0 && p < self.n_obs()
    }

    pub fn base_rate(&self) -> f64 {
        self.positives() as f64 / self.n_obs() as f64
    }

    pub fn subset(&self, idx: &[usize]) -> TrainMatrix {
        TrainMatrix {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            names: self.names.clone(),
        }
    }
}

/// Per-feature z-scoring constants estimated on training rows only.
/// Constant columns map to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Population (divisor n) moments.
    pub fn fit(x: &Matrix) -> Self {
        let n = x.rows() as f64;
        let mut mean = vec![0.0; x.cols()];
        for i in 0..x.rows() {
            for (m, v) in mean.iter_mut().zip(x.row(i)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; x.cols()];
        for i in 0..x.rows() {
            for ((s, v), m) in var.iter_mut().zip(x.row(i)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let sd = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 * (1.0 + sd) { sd } else { 0.0 }
            })
            .collect();
        Self { mean, sd }
    }

    pub fn transform(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..out.rows() {
            self.transform_row_in_place(out.row_mut(i));
        }
        out
    }

    pub fn transform_row_in_place(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.sd) {
            *v = if *s > 0.0 { (*v - m) / s } else { 0.0 };
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))` without overflow.
pub fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Logistic loss of score `z` against label `y`.
pub fn logistic_loss(z: f64, y: u8) -> f64 {
    if y == 1 {
        log1p_exp(-z)
    } else {
        log1p_exp(z)
    }
}

/// Label at the 0.5 threshold; a tie goes to class 0.
pub fn hard_label(p: f64) -> u8 {
    u8::from(p > 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Tree,
    Forest,
    LassoLogit,
    Svm,
    Gbm,
    Nnet,
    Super,
}

impl ModelKind {
    pub const ALL: [ModelKind; 7] = [
        ModelKind::Tree,
        ModelKind::Forest,
        ModelKind::LassoLogit,
        ModelKind::Svm,
        ModelKind::Gbm,
        ModelKind::Nnet,
        ModelKind::Super,
    ];

    /// Stream number used to derive this learner's seed.
    pub fn stream(self) -> u64 {
        ModelKind::ALL.iter().position(|&k| k == self).unwrap() as u64 + 1
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Tree => "tree",
            ModelKind::Forest => "forest",
            ModelKind::LassoLogit => "lasso_logit",
            ModelKind::Svm => "svm",
            ModelKind::Gbm => "gbm",
            ModelKind::Nnet => "nnet",
            ModelKind::Super => "super",
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        let key = match key.as_str() {
            "lasso" => "lasso_logit",
            "random_forest" | "rf" => "forest",
            "superlearner" | "super_learner" => "super",
            other => other,
        };
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| {
                let names: Vec<_> = ModelKind::ALL.iter().map(|k| k.name()).collect();
                format!("unknown algorithm `{s}` (expected one of {})", names.join(", "))
            })
    }
}

/// Hyperparameters for every learner kind.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnerSettings {
    pub tree: TreeSpec,
    pub forest: ForestSpec,
    pub lasso: LassoSpec,
    pub svm: SvmSpec,
    pub gbm: GbmSpec,
    pub nnet: NnetSpec,
    #[serde(rename = "super")]
    pub superlearner: SuperLearnerSpec,
}

/// Fits a model of `kind` with the matching settings.
pub fn fit_model(
    kind: ModelKind,
    train: &TrainMatrix,
    settings: &LearnerSettings,
    seed: u64,
) -> Result<Model, LearnError> {
    match kind {
        ModelKind::Tree => fit_tree(train, &settings.tree),
        ModelKind::Forest => fit_forest(train, &settings.forest, seed),
        ModelKind::LassoLogit => fit_lasso_logit(train, &settings.lasso, seed),
        ModelKind::Svm => fit_svm(train, &settings.svm, seed),
        ModelKind::Gbm => fit_gbm(train, &settings.gbm, seed),
        ModelKind::Nnet => fit_nnet(train, &settings.nnet, seed),
        ModelKind::Super => fit_superlearner(train, &settings.superlearner, seed),
    }
}

/// A fitted classifier of any kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Model {
    Tree(TreeModel),
    Forest(ForestModel),
    LassoLogit(LassoModel),
    Svm(SvmModel),
    Gbm(GbmModel),
    Nnet(NnetModel),
    Super(SuperLearnerModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub probability: Vec<f64>,
    pub label: Vec<u8>,
}

impl Model {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Tree(_) => ModelKind::Tree,
            Model::Forest(_) => ModelKind::Forest,
            Model::LassoLogit(_) => ModelKind::LassoLogit,
            Model::Svm(_) => ModelKind::Svm,
            Model::Gbm(_) => ModelKind::Gbm,
            Model::Nnet(_) => ModelKind::Nnet,
            Model::Super(_) => ModelKind::Super,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            Model::Tree(m) => m.n_features(),
            Model::Forest(m) => m.n_features(),
            Model::LassoLogit(m) => m.n_features(),
            Model::Svm(m) => m.n_features(),
            Model::Gbm(m) => m.n_features(),
            Model::Nnet(m) => m.n_features(),
            Model::Super(m) => m.n_features(),
        }
    }

    /// Probability of class 1 for one row; the caller checks the width.
    pub(crate) fn proba_row(&self, row: &[f64]) -> f64 {
        match self {
            Model::Tree(m) => m.proba_row(row),
            Model::Forest(m) => m.proba_row(row),
            Model::LassoLogit(m) => m.proba_row(row),
            Model::Svm(m) => m.proba_row(row),
            Model::Gbm(m) => m.proba_row(row),
            Model::Nnet(m) => m.proba_row(row),
            Model::Super(m) => m.proba_row(row),
        }
    }

    pub fn predict_proba(&self, x: &Matrix) -> Result<Vec<f64>, LearnError> {
        if x.cols() != self.n_features() {
            return Err(LearnError::ColumnMismatch {
                expected: self.n_features(),
                got: x.cols(),
            });
        }
        if !x.is_finite() {
            return Err(LearnError::InvalidData("non-finite feature value".into()));
        }
        Ok((0..x.rows())
            .map(|i| self.proba_row(x.row(i)).clamp(0.0, 1.0))
            .collect())
    }

    pub fn predict(&self, x: &Matrix) -> Result<Prediction, LearnError> {
        let probability = self.predict_proba(x)?;
        let label = probability.iter().map(|&p| hard_label(p)).collect();
        Ok(Prediction { probability, label })
    }
}

pub const MODEL_FORMAT: &str = "bidscreen-model";
pub const MODEL_FORMAT_VERSION: u32 = 1;

/// On-disk model: a JSON document carrying a format tag and version, the
/// feature names the model was trained on, the seed and the model itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedModel {
    pub format: String,
    pub version: u32,
    pub feature_names: Vec<String>,
    pub seed: u64,
    pub model: Model,
}

impl SavedModel {
    pub fn new(model: Model, feature_names: Vec<String>, seed: u64) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_FORMAT_VERSION,
            feature_names,
            seed,
            model,
        }
    }

    pub fn save<W: Write>(&self, writer: W) -> Result<(), LearnError> {
        serde_json::to_writer(writer, self).map_err(|e| LearnError::ModelFile(e.to_string()))
    }

    pub fn load<R: Read>(reader: R) -> Result<Self, LearnError> {
        let saved: SavedModel =
            serde_json::from_reader(reader).map_err(|e| LearnError::ModelFile(e.to_string()))?;
        if saved.format != MODEL_FORMAT {
            return Err(LearnError::ModelFile(format!("unknown format `{}`", saved.format)));
        }
        if saved.version != MODEL_FORMAT_VERSION {
            return Err(LearnError::ModelFile(format!(
                "unsupported version {} (expected {MODEL_FORMAT_VERSION})",
                saved.version
            )));
        }
        Ok(saved)
    }
}

/// Stratified fold assignment: each class is shuffled and dealt round-robin
/// into `k` folds. Returns the fold of every row.
pub(crate) fn stratified_folds(y: &[u8], k: usize, rng: &mut crate::rng::Rng) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut fold = vec![0; y.len()];
    let mut offset = 0;
    for class in [0u8, 1] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == class).collect();
        idx.shuffle(rng);
        for (r, i) in idx.into_iter().enumerate() {
            fold[i] = (offset + r) % k;
        }
        // continue dealing where the previous class stopped so fold sizes stay even
        offset = (offset + y.iter().filter(|&&v| v == class).count()) % k;
    }
    fold
}

/// Train/held-out row indices of fold `f`.
pub(crate) fn fold_split(folds: &[usize], f: usize) -> (Vec<usize>, Vec<usize>) {
    (0..folds.len()).partition(|&i| folds[i] != f)
}
