//! The evaluation protocol: per repetition, balance the classes by
//! downsampling, split into training and test rows, fit every configured
//! algorithm and record correct classification rates (CCR).

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::coalitions::{CoalitionLabel, FeatureTable, StatisticSet};
use crate::learners::{
    fit_model, rank_importance, FeatureImportance, LearnError, LearnerSettings, Matrix, Model,
    ModelKind, Prediction, SavedModel, TrainMatrix,
};
use crate::rng::{derive_seed, rng_from_seed, Rng};
use crate::screens::{Screen, ScreenCategory};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("no {0} coalitions in the table")]
    ClassAbsent(&'static str),
    #[error("too few rows: {0}")]
    TooFewRows(String),
    #[error("predicted and true labels differ in length ({predicted} vs {truth})")]
    LengthMismatch { predicted: usize, truth: usize },
    #[error("unknown feature column or screen `{0}`")]
    UnknownColumn(String),
    #[error("repetition {rep}: {source}")]
    Rep { rep: usize, source: LearnError },
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("thread pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Which coalition-based screens enter the model.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ScreenSubset {
    #[default]
    All,
    /// Asymmetry screens only (24 base features).
    AsymmetryOnly,
    /// Asymmetry screens without diffp and absdiff (16 base features).
    AsymmetryReduced,
    /// Screen names (all their statistics) or exact column names.
    Custom(Vec<String>),
}

impl fmt::Display for ScreenSubset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ScreenSubset::All => f.write_str("all"),
            ScreenSubset::AsymmetryOnly => f.write_str("asymmetry-only"),
            ScreenSubset::AsymmetryReduced => f.write_str("asymmetry-reduced"),
            ScreenSubset::Custom(cols) => f.write_str(&cols.join(",")),
        }
    }
}

impl FromStr for ScreenSubset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "all" => Ok(ScreenSubset::All),
            "asymmetry-only" | "asymmetry_only" => Ok(ScreenSubset::AsymmetryOnly),
            "asymmetry-reduced" | "asymmetry_reduced" => Ok(ScreenSubset::AsymmetryReduced),
            "" => Err("empty screen subset".into()),
            list => Ok(ScreenSubset::Custom(
                list.split(',').map(|c| c.trim().to_string()).filter(|c| !c.is_empty()).collect(),
            )),
        }
    }
}

impl From<ScreenSubset> for String {
    fn from(s: ScreenSubset) -> String {
        s.to_string()
    }
}

impl TryFrom<String> for ScreenSubset {
    type Error = String;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

fn screen_of(column: &str) -> Option<Screen> {
    Screen::from_name(column.split_once('_').map_or(column, |(s, _)| s))
}

/// Projects the table onto the requested columns, keeping their order.
pub fn feature_subset(table: &FeatureTable, subset: &ScreenSubset) -> Result<FeatureTable, PipelineError> {
    let keep: Vec<usize> = match subset {
        ScreenSubset::All => (0..table.n_features()).collect(),
        ScreenSubset::AsymmetryOnly | ScreenSubset::AsymmetryReduced => {
            let reduced = matches!(subset, ScreenSubset::AsymmetryReduced);
            table
                .names
                .iter()
                .enumerate()
                .filter(|(_, n)| match screen_of(n) {
                    Some(s) => {
                        s.category() == ScreenCategory::Asymmetry
                            && !(reduced && matches!(s, Screen::Diffp | Screen::Absdiff))
                    }
                    None => false,
                })
                .map(|(i, _)| i)
                .collect()
        }
        ScreenSubset::Custom(items) => {
            let mut wanted = vec![false; table.n_features()];
            for item in items {
                let by_screen: Vec<usize> = match Screen::from_name(item) {
                    Some(s) => (0..table.n_features()).filter(|&i| screen_of(&table.names[i]) == Some(s)).collect(),
                    None => table.column(item).into_iter().collect(),
                };
                if by_screen.is_empty() {
                    return Err(PipelineError::UnknownColumn(item.clone()));
                }
                by_screen.into_iter().for_each(|i| wanted[i] = true);
            }
            (0..table.n_features()).filter(|&i| wanted[i]).collect()
        }
    };
    if keep.is_empty() {
        return Err(PipelineError::InvalidConfig(format!("screen subset `{subset}` selects no columns")));
    }
    Ok(FeatureTable {
        names: keep.iter().map(|&i| table.names[i].clone()).collect(),
        rows: table
            .rows
            .iter()
            .map(|r| {
                let mut row = r.clone();
                row.values = keep.iter().map(|&i| r.values[i]).collect();
                row
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub algorithms: Vec<ModelKind>,
    pub reps: usize,
    pub train_fraction: f64,
    pub seed: u64,
    pub stats: StatisticSet,
    pub screens: ScreenSubset,
    pub k: usize,
    pub min_joint: usize,
    /// Worker threads; `None` uses every available core. Results do not
    /// depend on it, so it is not echoed into reports.
    #[serde(skip_serializing)]
    pub workers: Option<usize>,
    /// Split each class separately at the training fraction.
    pub stratified: bool,
    pub learners: LearnerSettings,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            algorithms: vec![ModelKind::LassoLogit, ModelKind::Forest, ModelKind::Super, ModelKind::Svm],
            reps: 100,
            train_fraction: 0.75,
            seed: 0,
            stats: StatisticSet::Base,
            screens: ScreenSubset::All,
            k: 3,
            min_joint: 3,
            workers: None,
            stratified: true,
            learners: LearnerSettings::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn check(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::InvalidConfig(m));
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return bad(format!("train_fraction must lie strictly between 0 and 1, got {}", self.train_fraction));
        }
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.algorithms.is_empty() {
            return bad("no algorithms selected".into());
        }
        if !(3..=4).contains(&self.k) {
            return bad(format!("k must be 3 or 4, got {}", self.k));
        }
        if self.min_joint < 3 {
            return bad(format!("min_joint must be at least 3, got {}", self.min_joint));
        }
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        Ok(())
    }
}

/// Runs `f` on a pool of `workers` threads (the global pool when `None`).
pub fn with_workers<T: Send>(workers: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T, PipelineError> {
    match workers {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| PipelineError::ThreadPool(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Balanced {
    /// Selected row indices: all minority rows, then the sampled majority
    /// rows, each in ascending order.
    pub indices: Vec<usize>,
    pub warning: Option<String>,
}

/// Downsamples the majority class uniformly without replacement.
pub fn balance(labels: &[u8], rng: &mut Rng) -> Result<Balanced, PipelineError> {
    let pos: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 1).collect();
    let neg: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == 0).collect();
    if pos.is_empty() {
        return Err(PipelineError::ClassAbsent("collusive"));
    }
    if neg.is_empty() {
        return Err(PipelineError::ClassAbsent("competitive"));
    }
    let (small, large) = if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) };
    let m = small.len();
    let mut picked: Vec<usize> = sample(rng, large.len(), m).into_iter().map(|i| large[i]).collect();
    picked.sort_unstable();
    let warning = (m < 10).then(|| format!("balanced sample has only {m} rows per class"));
    let mut indices = small;
    indices.extend(picked);
    Ok(Balanced { indices, warning })
}

/// Splits row positions `0..labels.len()` into training and test sets.
/// Stratified: per class, `round(fraction * n_c)` training rows, keeping
/// at least one row of the class on each side.
pub fn split(
    labels: &[u8],
    fraction: f64,
    stratified: bool,
    rng: &mut Rng,
) -> Result<(Vec<usize>, Vec<usize>), PipelineError> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    let groups: Vec<Vec<usize>> = if stratified {
        [0u8, 1]
            .iter()
            .map(|&c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
            .collect()
    } else {
        vec![(0..labels.len()).collect()]
    };
    for mut g in groups {
        if g.len() < 2 {
            return Err(PipelineError::TooFewRows(format!(
                "splitting needs at least two rows per {}, got {}",
                if stratified { "class" } else { "sample" },
                g.len()
            )));
        }
        g.shuffle(rng);
        let n_train = ((fraction * g.len() as f64).round() as usize).clamp(1, g.len() - 1);
        train.extend_from_slice(&g[..n_train]);
        test.extend_from_slice(&g[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Ccr {
    pub ccr: f64,
    /// Among truly collusive rows; `None` when there are none.
    pub ccr_collusion: Option<f64>,
    pub ccr_competition: Option<f64>,
}

pub fn ccr_metrics(predicted: &[u8], truth: &[u8]) -> Result<Ccr, PipelineError> {
    if predicted.len() != truth.len() {
        return Err(PipelineError::LengthMismatch { predicted: predicted.len(), truth: truth.len() });
    }
    if truth.is_empty() {
        return Err(PipelineError::TooFewRows("no test rows".into()));
    }
    let rate = |class: Option<u8>| {
        let (hit, n) = predicted
            .iter()
            .zip(truth)
            .filter(|(_, &t)| class.is_none_or(|c| c == t))
            .fold((0usize, 0usize), |(h, n), (p, t)| (h + usize::from(p == t), n + 1));
        (n > 0).then(|| hit as f64 / n as f64)
    };
    Ok(Ccr {
        ccr: rate(None).unwrap_or(0.0),
        ccr_collusion: rate(Some(1)),
        ccr_competition: rate(Some(0)),
    })
}

/// Feature matrix and binary labels of the collusive/competitive rows.
pub fn training_data(table: &FeatureTable) -> Result<TrainMatrix, PipelineError> {
    let rows: Vec<(&[f64], u8)> = table
        .rows
        .iter()
        .filter_map(|r| r.label.and_then(CoalitionLabel::as_binary).map(|y| (r.values.as_slice(), y)))
        .collect();
    let x = Matrix::from_rows(&rows.iter().map(|r| r.0).collect::<Vec<_>>());
    let x = if rows.is_empty() { Matrix::zeros(0, table.n_features()) } else { x };
    let y = rows.iter().map(|r| r.1).collect();
    Ok(TrainMatrix::new_unchecked_classes(x, y, table.names.clone())?)
}

/// Randomly permutes the collusive/competitive labels among those rows.
pub fn shuffle_labels(table: &FeatureTable, seed: u64) -> FeatureTable {
    let mut out = table.clone();
    let idx: Vec<usize> = (0..table.rows.len())
        .filter(|&i| table.rows[i].label.and_then(CoalitionLabel::as_binary).is_some())
        .collect();
    let mut labels: Vec<Option<CoalitionLabel>> = idx.iter().map(|&i| table.rows[i].label).collect();
    labels.shuffle(&mut rng_from_seed(seed));
    for (&i, l) in idx.iter().zip(labels) {
        out.rows[i].label = l;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub sd: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len();
        if n == 0 {
            return Summary { mean: f64::NAN, sd: f64::NAN, n };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Summary { mean, sd, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: ModelKind,
    pub ccr: Summary,
    pub ccr_collusion: Summary,
    pub ccr_competition: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepResult {
    pub algorithm: ModelKind,
    #[serde(flatten)]
    pub ccr: Ccr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepRecord {
    pub rep: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub results: Vec<RepResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config: ExperimentConfig,
    pub feature_names: Vec<String>,
    pub n_collusive: usize,
    pub n_competitive: usize,
    pub summaries: Vec<AlgorithmSummary>,
    pub reps: Vec<RepRecord>,
    /// Forest Gini importance averaged over repetitions, max = 100.
    pub importance: Option<Vec<FeatureImportance>>,
    pub warnings: Vec<String>,
}

impl EvaluationReport {
    pub fn summary(&self, algorithm: ModelKind) -> Option<&AlgorithmSummary> {
        self.summaries.iter().find(|s| s.algorithm == algorithm)
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<(), PipelineError> {
        serde_json::to_writer_pretty(writer, self)?;
        Ok(())
    }

    /// One row per algorithm: mean and sd of the three CCRs.
    pub fn write_ccr_csv<W: Write>(&self, writer: W) -> Result<(), PipelineError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "algorithm",
            "ccr",
            "ccr_sd",
            "ccr_collusion",
            "ccr_collusion_sd",
            "ccr_competition",
            "ccr_competition_sd",
            "reps",
        ])?;
        for s in &self.summaries {
            w.write_record([
                s.algorithm.name().to_string(),
                format!("{:.6}", s.ccr.mean),
                format!("{:.6}", s.ccr.sd),
                format!("{:.6}", s.ccr_collusion.mean),
                format!("{:.6}", s.ccr_collusion.sd),
                format!("{:.6}", s.ccr_competition.mean),
                format!("{:.6}", s.ccr_competition.sd),
                s.ccr.n.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-repetition raw values.
    pub fn write_reps_csv<W: Write>(&self, writer: W) -> Result<(), PipelineError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["rep", "seed", "algorithm", "ccr", "ccr_collusion", "ccr_competition"])?;
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        for r in &self.reps {
            for res in &r.results {
                w.write_record([
                    r.rep.to_string(),
                    r.seed.to_string(),
                    res.algorithm.name().to_string(),
                    format!("{:.6}", res.ccr.ccr),
                    opt(res.ccr.ccr_collusion),
                    opt(res.ccr.ccr_competition),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Importance sorted descending; nothing is written without a forest.
    pub fn write_importance_csv<W: Write>(&self, writer: W) -> Result<(), PipelineError> {
        write_importance_csv(self.importance.as_deref().unwrap_or_default(), writer)
    }
}

pub fn write_importance_csv<W: Write>(ranked: &[FeatureImportance], writer: W) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rank", "feature", "importance"])?;
    for (i, f) in ranked.iter().enumerate() {
        w.write_record([(i + 1).to_string(), f.feature.clone(), format!("{:.6}", f.importance)])?;
    }
    w.flush()?;
    Ok(())
}

struct RepOutcome {
    record: RepRecord,
    importance: Option<Vec<f64>>,
    warning: Option<String>,
}

fn run_rep(data: &TrainMatrix, config: &ExperimentConfig, rep: usize) -> Result<RepOutcome, PipelineError> {
    let seed = derive_seed(config.seed, rep as u64);
    let mut rng = rng_from_seed(seed);
    let balanced = balance(data.y(), &mut rng)?;
    let sample = data.subset(&balanced.indices);
    let (tr, te) = split(sample.y(), config.train_fraction, config.stratified, &mut rng)?;
    let train = sample.subset(&tr);
    let test = sample.subset(&te);
    if !train.has_both_classes() {
        return Err(PipelineError::TooFewRows(format!("repetition {rep}: training split lacks a class")));
    }
    let mut results = Vec::with_capacity(config.algorithms.len());
    let mut importance = None;
    for &kind in &config.algorithms {
        let model = fit_model(kind, &train, &config.learners, derive_seed(seed, kind.stream()))
            .map_err(|source| PipelineError::Rep { rep, source })?;
        let pred = model.predict(test.x())?;
        results.push(RepResult { algorithm: kind, ccr: ccr_metrics(&pred.label, test.y())? });
        if let Model::Forest(f) = &model {
            importance = Some(f.importance.clone());
        }
    }
    Ok(RepOutcome {
        record: RepRecord { rep, seed, n_train: tr.len(), n_test: te.len(), results },
        importance,
        warning: balanced.warning,
    })
}

/// Runs the repeated protocol on the labeled rows of `table` (mixed rows
/// are dropped). The report depends only on the table and the config.
pub fn run_experiment(table: &FeatureTable, config: &ExperimentConfig) -> Result<EvaluationReport, PipelineError> {
    config.check()?;
    let table = feature_subset(&table.trainable(), &config.screens)?;
    let data = training_data(&table)?;
    let n_collusive = data.positives();
    let n_competitive = data.n_obs() - n_collusive;
    if n_collusive == 0 {
        return Err(PipelineError::ClassAbsent("collusive"));
    }
    if n_competitive == 0 {
        return Err(PipelineError::ClassAbsent("competitive"));
    }
    let outcomes: Vec<Result<RepOutcome, PipelineError>> = with_workers(config.workers, || {
        (0..config.reps).into_par_iter().map(|r| run_rep(&data, config, r)).collect()
    })?;
    let mut reps = Vec::with_capacity(config.reps);
    let mut importance_sum: Option<Vec<f64>> = None;
    let mut warnings = Vec::new();
    for outcome in outcomes {
        let o = outcome?;
        if let Some(imp) = o.importance {
            let acc = importance_sum.get_or_insert_with(|| vec![0.0; imp.len()]);
            acc.iter_mut().zip(&imp).for_each(|(a, b)| *a += b);
        }
        if let Some(w) = o.warning {
            if !warnings.contains(&w) {
                warnings.push(w);
            }
        }
        reps.push(o.record);
    }
    let summaries = config
        .algorithms
        .iter()
        .enumerate()
        .map(|(a, &algorithm)| {
            let pick = |f: fn(&Ccr) -> Option<f64>| -> Vec<f64> {
                reps.iter().filter_map(|r| f(&r.results[a].ccr)).collect()
            };
            AlgorithmSummary {
                algorithm,
                ccr: Summary::of(&pick(|c| Some(c.ccr))),
                ccr_collusion: Summary::of(&pick(|c| c.ccr_collusion)),
                ccr_competition: Summary::of(&pick(|c| c.ccr_competition)),
            }
        })
        .collect();
    let importance = importance_sum.map(|sum| {
        let mean: Vec<f64> = sum.iter().map(|v| v / config.reps as f64).collect();
        rank_importance(&mean, &table.names)
    });
    Ok(EvaluationReport {
        config: config.clone(),
        feature_names: table.names.clone(),
        n_collusive,
        n_competitive,
        summaries,
        reps,
        importance,
        warnings,
    })
}

/// Fits `kind` on one balanced draw of all labeled rows, for scoring new data.
pub fn fit_final_model(table: &FeatureTable, kind: ModelKind, config: &ExperimentConfig) -> Result<SavedModel, PipelineError> {
    config.check()?;
    let table = feature_subset(&table.trainable(), &config.screens)?;
    let data = training_data(&table)?;
    let seed = derive_seed(config.seed, u64::MAX);
    let balanced = balance(data.y(), &mut rng_from_seed(seed))?;
    let sample = data.subset(&balanced.indices);
    let model_seed = derive_seed(seed, kind.stream());
    let model = with_workers(config.workers, || fit_model(kind, &sample, &config.learners, model_seed))??;
    Ok(SavedModel::new(model, table.names.clone(), model_seed))
}

/// Probabilities of a saved model on every row of `table`. Columns are
/// matched by name, so their order in the table does not matter; a column
/// the model was trained on but the table lacks is an error.
pub fn score_table(table: &FeatureTable, saved: &SavedModel) -> Result<Prediction, PipelineError> {
    let cols = saved
        .feature_names
        .iter()
        .map(|n| table.column(n).ok_or_else(|| PipelineError::UnknownColumn(n.clone())))
        .collect::<Result<Vec<_>, _>>()?;
    let rows: Vec<Vec<f64>> = table.rows.iter().map(|r| cols.iter().map(|&c| r.values[c]).collect()).collect();
    let x = if rows.is_empty() { Matrix::zeros(0, cols.len()) } else { Matrix::from_rows(&rows) };
    Ok(saved.model.predict(&x)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassStat {
    pub mean: f64,
    /// Sample standard deviation; 0 when `n == 1`.
    pub sd: f64,
    pub n: usize,
    pub single: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianRow {
    pub feature: String,
    pub collusive: ClassStat,
    pub competitive: ClassStat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMediansReport {
    pub rows: Vec<MedianRow>,
}

impl ClassMediansReport {
    pub fn get(&self, feature: &str) -> Option<&MedianRow> {
        self.rows.iter().find(|r| r.feature == feature)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), PipelineError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "feature",
            "collusive_mean",
            "collusive_sd",
            "collusive_n",
            "competitive_mean",
            "competitive_sd",
            "competitive_n",
        ])?;
        for r in &self.rows {
            w.write_record([
                r.feature.clone(),
                format!("{:.6}", r.collusive.mean),
                format!("{:.6}", r.collusive.sd),
                r.collusive.n.to_string(),
                format!("{:.6}", r.competitive.mean),
                format!("{:.6}", r.competitive.sd),
                r.competitive.n.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Per class, mean and standard deviation of every `<screen>_median` column.
pub fn class_medians_report(table: &FeatureTable) -> Result<ClassMediansReport, PipelineError> {
    let stat = |col: usize, label: CoalitionLabel| -> Result<ClassStat, PipelineError> {
        let v: Vec<f64> = table.rows.iter().filter(|r| r.label == Some(label)).map(|r| r.values[col]).collect();
        if v.is_empty() {
            return Err(PipelineError::ClassAbsent(label.as_str()));
        }
        let s = Summary::of(&v);
        Ok(ClassStat { mean: s.mean, sd: s.sd, n: s.n, single: s.n == 1 })
    };
    let rows = table
        .names
        .iter()
        .enumerate()
        .filter(|(_, n)| n.ends_with("_median"))
        .map(|(i, n)| {
            Ok(MedianRow {
                feature: n.clone(),
                collusive: stat(i, CoalitionLabel::Collusive)?,
                competitive: stat(i, CoalitionLabel::Competitive)?,
            })
        })
        .collect::<Result<Vec<_>, PipelineError>>()?;
    Ok(ClassMediansReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coalitions::{feature_names, FeatureRow};

    fn table(n_coll: usize, n_comp: usize, stats: StatisticSet) -> FeatureTable {
        let names = feature_names(stats);
        let p = names.len();
        let rows = (0..n_coll + n_comp)
            .map(|i| {
                let coll = i < n_coll;
                FeatureRow {
                    coalition_id: (i + 1).to_string(),
                    members: vec!["a".into(), "b".into(), "c".into()],
                    n_tenders: 3,
                    label: Some(if coll { CoalitionLabel::Collusive } else { CoalitionLabel::Competitive }),
                    values: (0..p)
                        .map(|j| if coll { 1.0 } else { 2.0 } + ((i * 7919 + j * 104_729) % 1009) as f64 / 2000.0)
                        .collect(),
                }
            })
            .collect();
        FeatureTable { names, rows }
    }

    #[test]
    fn balance_counts() {
        let mut labels = vec![1u8; 207];
        labels.extend(vec![0u8; 1793]);
        let b = balance(&labels, &mut rng_from_seed(1)).unwrap();
        assert_eq!(b.indices.len(), 414);
        assert_eq!(b.indices.iter().filter(|&&i| labels[i] == 1).count(), 207);
        assert!(b.warning.is_none());

        let even = [1u8, 0, 1, 0];
        let mut b = balance(&even, &mut rng_from_seed(2)).unwrap().indices;
        b.sort_unstable();
        assert_eq!(b, [0, 1, 2, 3]);

        let mut extreme = vec![0u8; 1_000_000];
        extreme[5] = 1;
        let b = balance(&extreme, &mut rng_from_seed(3)).unwrap();
        assert_eq!(b.indices.len(), 2);
        assert!(b.warning.is_some());

        assert!(matches!(balance(&[0, 0], &mut rng_from_seed(0)), Err(PipelineError::ClassAbsent(_))));
    }

    #[test]
    fn split_sizes() {
        let labels: Vec<u8> = (0..414).map(|i| u8::from(i < 207)).collect();
        let (tr, te) = split(&labels, 0.75, true, &mut rng_from_seed(4)).unwrap();
        assert_eq!((tr.len(), te.len()), (310, 104));
        let (tr, te) = split(&[1, 0, 1, 0], 0.5, true, &mut rng_from_seed(5)).unwrap();
        assert_eq!((tr.len(), te.len()), (2, 2));
        let lab = [1u8, 0, 1, 0];
        assert_eq!(tr.iter().map(|&i| lab[i]).sum::<u8>(), 1);
        assert_eq!(te.iter().map(|&i| lab[i]).sum::<u8>(), 1);
        assert!(split(&[1, 0, 0], 0.5, true, &mut rng_from_seed(0)).is_err());
        for seed in 0..50 {
            let (tr, te) = split(&labels, 0.6, seed % 2 == 0, &mut rng_from_seed(seed)).unwrap();
            assert_eq!(tr.len() + te.len(), 414);
            assert!(tr.iter().all(|i| te.binary_search(i).is_err()));
        }
    }

    #[test]
    fn ccr_definitions() {
        let truth = [1, 1, 1, 1, 1, 0, 0, 0, 0, 0];
        let mut pred = truth;
        pred[0] = 0;
        assert_eq!(ccr_metrics(&pred, &truth).unwrap().ccr, 0.9);
        let c = ccr_metrics(&[1; 10], &truth).unwrap();
        assert_eq!((c.ccr, c.ccr_collusion, c.ccr_competition), (0.5, Some(1.0), Some(0.0)));
        let c = ccr_metrics(&truth, &truth).unwrap();
        assert_eq!((c.ccr, c.ccr_collusion, c.ccr_competition), (1.0, Some(1.0), Some(1.0)));
        let c = ccr_metrics(&[1, 0], &[1, 1]).unwrap();
        assert_eq!(c.ccr_competition, None);
        assert!(ccr_metrics(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn subsets() {
        let t = table(2, 2, StatisticSet::Base);
        assert_eq!(feature_subset(&t, &ScreenSubset::All).unwrap(), t);
        assert_eq!(feature_subset(&t, &ScreenSubset::AsymmetryOnly).unwrap().n_features(), 24);
        let r = feature_subset(&t, &ScreenSubset::AsymmetryReduced).unwrap();
        assert_eq!(r.n_features(), 16);
        assert!(r.names.iter().all(|n| !n.starts_with("diffp") && !n.starts_with("absdiff")));
        let e = table(2, 2, StatisticSet::Extended);
        assert_eq!(feature_subset(&e, &ScreenSubset::AsymmetryReduced).unwrap().n_features(), 40);
        let c = feature_subset(&t, &"ks_median,cv".parse().unwrap()).unwrap();
        assert_eq!(c.names, ["cv_mean", "cv_median", "cv_min", "cv_max", "ks_median"]);
        assert!(matches!(
            feature_subset(&t, &"nope".parse().unwrap()),
            Err(PipelineError::UnknownColumn(_))
        ));
    }

    #[test]
    fn medians_report() {
        let t = table(1, 3, StatisticSet::Base);
        let r = class_medians_report(&t).unwrap();
        assert_eq!(r.rows.len(), 9);
        let cv = r.get("cv_median").unwrap();
        assert_eq!((cv.collusive.sd, cv.collusive.n, cv.collusive.single), (0.0, 1, true));
        assert!(cv.collusive.mean < cv.competitive.mean);
        assert!(class_medians_report(&table(0, 3, StatisticSet::Base)).is_err());
    }

    #[test]
    fn experiment_is_deterministic_and_separates() {
        let t = table(30, 50, StatisticSet::Base);
        let mut config = ExperimentConfig {
            algorithms: vec![ModelKind::Tree, ModelKind::Forest, ModelKind::LassoLogit],
            reps: 6,
            ..ExperimentConfig::default()
        };
        config.learners.forest.n_trees = 30;
        let a = run_experiment(&t, &config).unwrap();
        assert_eq!(a.reps.len(), 6);
        assert_eq!((a.n_collusive, a.n_competitive), (30, 50));
        for s in &a.summaries {
            assert_eq!(s.ccr.mean, 1.0, "{:?}", s.algorithm);
        }
        let imp = a.importance.as_ref().unwrap();
        assert_eq!(imp.len(), 36);
        assert_eq!(imp[0].importance, 100.0);
        config.workers = Some(3);
        let mut b = run_experiment(&t, &config).unwrap();
        b.config.workers = None;
        assert_eq!(a, b);
        let mut ja = Vec::new();
        let mut jb = Vec::new();
        a.write_json(&mut ja).unwrap();
        b.write_json(&mut jb).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn config_checks_and_serde() {
        let mut c = ExperimentConfig::default();
        assert!(c.check().is_ok());
        c.train_fraction = 1.0;
        assert!(c.check().is_err());
        let c = ExperimentConfig { reps: 0, ..ExperimentConfig::default() };
        assert!(c.check().is_err());
        let c = ExperimentConfig { screens: ScreenSubset::AsymmetryReduced, ..ExperimentConfig::default() };
        let json = serde_json::to_string(&c).unwrap();
        assert!(json.contains("\"asymmetry-reduced\""));
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn shuffled_labels_keep_counts() {
        let t = table(10, 20, StatisticSet::Base);
        let s = shuffle_labels(&t, 3);
        assert_eq!(s.count(CoalitionLabel::Collusive), 10);
        assert_ne!(s, t);
    }

    #[test]
    fn scoring_matches_columns_by_name() {
        let t = table(12, 12, StatisticSet::Base);
        let config = ExperimentConfig { seed: 4, ..ExperimentConfig::default() };
        let saved = fit_final_model(&t, ModelKind::Tree, &config).unwrap();
        let direct = score_table(&t, &saved).unwrap();

        let mut reordered = t.clone();
        reordered.names.reverse();
        reordered.rows.iter_mut().for_each(|r| r.values.reverse());
        assert_eq!(score_table(&reordered, &saved).unwrap(), direct);

        let narrow = feature_subset(&t, &ScreenSubset::AsymmetryOnly).unwrap();
        assert!(matches!(score_table(&narrow, &saved), Err(PipelineError::UnknownColumn(_))));
    }
}
