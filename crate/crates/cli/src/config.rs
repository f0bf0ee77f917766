//! Run configuration: a TOML file plus command-line overrides.
//!
//! ```toml
//! input = "bids.csv"
//! output_dir = "out"
//!
//! [columns]
//! tender_id = "contract"
//! bid = "price"
//!
//! [experiment]
//! reps = 100
//! seed = 7
//! algorithms = ["lasso_logit", "forest", "super", "svm"]
//! stats = "base"
//! screens = "all"
//!
//! [experiment.learners.forest]
//! n_trees = 1000
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bidscreen::pipeline::{ExperimentConfig, ScreenSubset};
use bidscreen::{ColumnMap, StatisticSet};
use serde::{Deserialize, Serialize};

pub const DEFAULT_OUTPUT_DIR: &str = "bidscreen-out";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub columns: ColumnMap,
    pub experiment: ExperimentConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub stats: Option<StatisticSet>,
    pub k: Option<usize>,
    pub min_joint: Option<usize>,
    pub screens: Option<ScreenSubset>,
    pub reps: Option<usize>,
    pub algorithms: Option<Vec<bidscreen::learners::ModelKind>>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<RunConfig> {
        let Some(path) = path else { return Ok(RunConfig::default()) };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        // relative paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut config.input, &mut config.output_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(config)
    }

    pub fn apply(mut self, o: Overrides) -> Result<RunConfig> {
        let e = &mut self.experiment;
        if o.input.is_some() {
            self.input = o.input;
        }
        if o.output_dir.is_some() {
            self.output_dir = o.output_dir;
        }
        e.seed = o.seed.unwrap_or(e.seed);
        e.workers = o.workers.or(e.workers);
        e.stats = o.stats.unwrap_or(e.stats);
        e.k = o.k.unwrap_or(e.k);
        e.min_joint = o.min_joint.unwrap_or(e.min_joint);
        e.reps = o.reps.unwrap_or(e.reps);
        if let Some(s) = o.screens {
            e.screens = s;
        }
        if let Some(a) = o.algorithms {
            e.algorithms = a;
        }
        e.check()?;
        Ok(self)
    }

    pub fn input(&self) -> Result<&Path> {
        self.input
            .as_deref()
            .ok_or_else(|| anyhow::anyhow!("no input file given (pass a path or set `input` in the config)"))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    pub fn feature_config(&self) -> bidscreen::FeatureConfig {
        bidscreen::FeatureConfig {
            k: self.experiment.k,
            min_joint: self.experiment.min_joint,
            stats: self.experiment.stats,
        }
    }
}
