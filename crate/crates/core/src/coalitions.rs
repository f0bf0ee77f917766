//! Coalitions of `k` firms that bid together in at least `min_joint`
//! tenders, and the coalition-based features built from them.
//!
//! For every coalition the bids of non-members are discarded, the nine
//! tender-based screens are computed on the members' bids in each shared
//! tender, and each screen is summarized across tenders by a fixed set of
//! statistics. Feature columns are ordered screen-major, statistic-minor and
//! named `<screen>_<stat>`, e.g. `cv_median`.

use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Dataset;
use crate::index::{build_index, ParticipationIndex, TenderSet};
use crate::screens::{screen_vector, Screen, ScreenError, ScreenVector};

#[derive(Debug, Error)]
pub enum CoalitionError {
    #[error("coalition size must be 3 or 4, got {0}")]
    InvalidSize(usize),
    #[error("min_joint must be at least 3, got {0}")]
    InvalidMinJoint(usize),
    #[error("firm `{firm}` has no bid in tender `{tender}` listed for its coalition")]
    MissingBid { firm: String, tender: String },
    #[error("cannot aggregate an empty list of screen vectors")]
    EmptyAggregate,
    #[error(transparent)]
    Screen(#[from] ScreenError),
    #[error("feature table: {0}")]
    Table(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// `k` firm ordinals (ascending) and the tender ordinals where all of them bid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coalition {
    members: Vec<u32>,
    tenders: Vec<u32>,
}

impl Coalition {
    pub fn members(&self) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.members.iter().map(|&m| m as usize)
    }

    pub fn tenders(&self) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.tenders.iter().map(|&t| t as usize)
    }

    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn n_tenders(&self) -> usize {
        self.tenders.len()
    }

    pub fn member_ids<'a>(&'a self, firms: &'a [String]) -> Vec<&'a str> {
        self.members().map(|m| firms[m].as_str()).collect()
    }
}

fn check_params(k: usize, min_joint: usize) -> Result<(), CoalitionError> {
    if !(3..=4).contains(&k) {
        return Err(CoalitionError::InvalidSize(k));
    }
    if min_joint < 3 {
        return Err(CoalitionError::InvalidMinJoint(min_joint));
    }
    Ok(())
}

/// All `k`-subsets of firms whose tender sets share at least `min_joint`
/// tenders, in lexicographic order of member ordinals.
pub fn enumerate_coalitions(
    index: &ParticipationIndex,
    k: usize,
    min_joint: usize,
) -> Result<Vec<Coalition>, CoalitionError> {
    check_params(k, min_joint)?;
    let n = index.n_firms();
    let per_first: Vec<Vec<Coalition>> = (0..n)
        .into_par_iter()
        .map(|first| {
            let mut out = Vec::new();
            let root = index.tenders_of(first);
            if root.count() >= min_joint {
                let mut search = Search {
                    index,
                    k,
                    min_joint,
                    members: vec![first as u32],
                    scratch: vec![TenderSet::new(index.n_tenders()); k],
                    out: &mut out,
                };
                search.extend(root.clone(), first + 1);
            }
            out
        })
        .collect();
    Ok(per_first.into_iter().flatten().collect())
}

struct Search<'a> {
    index: &'a ParticipationIndex,
    k: usize,
    min_joint: usize,
    members: Vec<u32>,
    scratch: Vec<TenderSet>,
    out: &'a mut Vec<Coalition>,
}

impl Search<'_> {
    fn extend(&mut self, common: TenderSet, start: usize) {
        let depth = self.members.len();
        let n = self.index.n_firms();
        let needed = self.k - depth;
        for next in start..=n.saturating_sub(needed) {
            let mut joint = std::mem::replace(&mut self.scratch[depth], TenderSet::new(0));
            let count = common.intersect_into(self.index.tenders_of(next), &mut joint);
            if count >= self.min_joint {
                self.members.push(next as u32);
                if needed == 1 {
                    self.out.push(Coalition {
                        members: self.members.clone(),
                        tenders: joint.iter().map(|t| t as u32).collect(),
                    });
                } else {
                    self.extend(joint.clone(), next + 1);
                }
                self.members.pop();
            }
            self.scratch[depth] = joint;
        }
    }
}

/// Screens of the members' bids in each of the coalition's tenders.
pub fn coalition_screens(
    coalition: &Coalition,
    dataset: &Dataset,
) -> Result<Vec<ScreenVector>, CoalitionError> {
    let mut bids = Vec::with_capacity(coalition.k());
    coalition
        .tenders()
        .map(|t| {
            let tender = &dataset.tenders()[t];
            bids.clear();
            for m in coalition.members() {
                let row = tender.row_of(m).ok_or_else(|| CoalitionError::MissingBid {
                    firm: dataset.firms()[m].clone(),
                    tender: tender.id().to_string(),
                })?;
                bids.push(row.bid);
            }
            Ok(screen_vector(&bids)?)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Mean,
    Median,
    Min,
    Max,
    P05,
    P10,
    P25,
    P75,
    P90,
    P95,
}

impl Statistic {
    pub fn name(self) -> &'static str {
        match self {
            Statistic::Mean => "mean",
            Statistic::Median => "median",
            Statistic::Min => "min",
            Statistic::Max => "max",
            Statistic::P05 => "p05",
            Statistic::P10 => "p10",
            Statistic::P25 => "p25",
            Statistic::P75 => "p75",
            Statistic::P90 => "p90",
            Statistic::P95 => "p95",
        }
    }

    /// Applies the statistic to values sorted ascending.
    fn apply(self, sorted: &[f64]) -> f64 {
        match self {
            Statistic::Mean => {
                // shifted by the minimum so constant input is reproduced exactly
                let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
                let m = lo + sorted.iter().map(|v| v - lo).sum::<f64>() / sorted.len() as f64;
                m.clamp(lo, hi)
            }
            Statistic::Median => percentile(sorted, 0.5),
            Statistic::Min => sorted[0],
            Statistic::Max => sorted[sorted.len() - 1],
            Statistic::P05 => percentile(sorted, 0.05),
            Statistic::P10 => percentile(sorted, 0.10),
            Statistic::P25 => percentile(sorted, 0.25),
            Statistic::P75 => percentile(sorted, 0.75),
            Statistic::P90 => percentile(sorted, 0.90),
            Statistic::P95 => percentile(sorted, 0.95),
        }
    }
}

/// Inclusive linear interpolation between closest ranks: position
/// `q * (n - 1)` in the 0-based sorted sample.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StatisticSet {
    /// mean, median, min, max: 36 features.
    #[default]
    Base,
    /// base plus the 5th, 10th, 25th, 75th, 90th and 95th percentiles: 90 features.
    Extended,
}

impl StatisticSet {
    pub fn statistics(self) -> &'static [Statistic] {
        use Statistic::*;
        match self {
            StatisticSet::Base => &[Mean, Median, Min, Max],
            StatisticSet::Extended => &[Mean, Median, Min, Max, P05, P10, P25, P75, P90, P95],
        }
    }

    pub fn n_features(self) -> usize {
        Screen::ALL.len() * self.statistics().len()
    }
}

impl FromStr for StatisticSet {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "base" => Ok(StatisticSet::Base),
            "extended" => Ok(StatisticSet::Extended),
            other => Err(format!("unknown statistic set `{other}` (expected base or extended)")),
        }
    }
}

pub fn feature_name(screen: Screen, stat: Statistic) -> String {
    format!("{}_{}", screen.name(), stat.name())
}

/// Column names for `set`, screen-major.
pub fn feature_names(set: StatisticSet) -> Vec<String> {
    Screen::ALL
        .iter()
        .flat_map(|&s| set.statistics().iter().map(move |&t| feature_name(s, t)))
        .collect()
}

/// Summarizes tender-based screens across a coalition's tenders; values are
/// ordered as [`feature_names`].
pub fn aggregate(vectors: &[ScreenVector], set: StatisticSet) -> Result<Vec<f64>, CoalitionError> {
    if vectors.is_empty() {
        return Err(CoalitionError::EmptyAggregate);
    }
    let mut out = Vec::with_capacity(set.n_features());
    let mut column = Vec::with_capacity(vectors.len());
    for screen in Screen::ALL {
        column.clear();
        column.extend(vectors.iter().map(|v| v.get(screen)));
        column.sort_unstable_by(f64::total_cmp);
        out.extend(set.statistics().iter().map(|s| s.apply(&column)));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoalitionLabel {
    Collusive,
    Competitive,
    Mixed,
}

impl CoalitionLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            CoalitionLabel::Collusive => "collusive",
            CoalitionLabel::Competitive => "competitive",
            CoalitionLabel::Mixed => "mixed",
        }
    }

    /// 1 for collusive, 0 for competitive, `None` for mixed.
    pub fn as_binary(self) -> Option<u8> {
        match self {
            CoalitionLabel::Collusive => Some(1),
            CoalitionLabel::Competitive => Some(0),
            CoalitionLabel::Mixed => None,
        }
    }
}

impl fmt::Display for CoalitionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CoalitionLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "collusive" => Ok(CoalitionLabel::Collusive),
            "competitive" => Ok(CoalitionLabel::Competitive),
            "mixed" => Ok(CoalitionLabel::Mixed),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

/// Collusive when every member is flagged in every shared tender,
/// competitive when none is, mixed otherwise.
pub fn label_coalition(coalition: &Coalition, dataset: &Dataset) -> CoalitionLabel {
    let (mut rigged, mut clean) = (false, false);
    for t in coalition.tenders() {
        let tender = &dataset.tenders()[t];
        for m in coalition.members() {
            match tender.row_of(m) {
                Some(row) if row.rigged => rigged = true,
                Some(_) => clean = true,
                None => {}
            }
        }
    }
    match (rigged, clean) {
        (true, false) => CoalitionLabel::Collusive,
        (false, true) => CoalitionLabel::Competitive,
        _ => CoalitionLabel::Mixed,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureConfig {
    pub k: usize,
    pub min_joint: usize,
    pub stats: StatisticSet,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            k: 3,
            min_joint: 3,
            stats: StatisticSet::Base,
        }
    }
}

/// One coalition's features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRow {
    pub coalition_id: String,
    pub members: Vec<String>,
    pub n_tenders: usize,
    /// `None` for tables read without labels.
    pub label: Option<CoalitionLabel>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTable {
    pub names: Vec<String>,
    pub rows: Vec<FeatureRow>,
}

impl FeatureTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.names.len()
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn count(&self, label: CoalitionLabel) -> usize {
        self.rows.iter().filter(|r| r.label == Some(label)).count()
    }

    /// Rows with a collusive or competitive label.
    pub fn trainable(&self) -> FeatureTable {
        FeatureTable {
            names: self.names.clone(),
            rows: self
                .rows
                .iter()
                .filter(|r| r.label.and_then(CoalitionLabel::as_binary).is_some())
                .cloned()
                .collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), CoalitionError> {
        let table_err = |e: csv::Error| CoalitionError::Table(e.to_string());
        let k = self.rows.first().map_or(3, |r| r.members.len());
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["coalition_id".to_string()];
        header.extend((1..=k).map(|i| format!("member_{i}")));
        header.push("n_tenders".into());
        header.push("label".into());
        header.extend(self.names.iter().cloned());
        w.write_record(&header).map_err(table_err)?;
        for row in &self.rows {
            if row.members.len() != k {
                return Err(CoalitionError::Table("rows disagree on coalition size".into()));
            }
            let mut rec = vec![row.coalition_id.clone()];
            rec.extend(row.members.iter().cloned());
            rec.push(row.n_tenders.to_string());
            rec.push(row.label.map(|l| l.to_string()).unwrap_or_default());
            rec.extend(row.values.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec).map_err(table_err)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads a table written by [`FeatureTable::write_csv`]. An empty label
    /// cell, or a missing `label` column, reads as unlabeled.
    pub fn read_csv<R: Read>(reader: R) -> Result<FeatureTable, CoalitionError> {
        let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
        let table_err = |e: csv::Error| CoalitionError::Table(e.to_string());
        let header = rdr.headers().map_err(table_err)?.clone();
        if header.get(0) != Some("coalition_id") {
            return Err(CoalitionError::Table("first column must be coalition_id".into()));
        }
        let k = header.iter().filter(|h| h.starts_with("member_")).count();
        let n_tenders_col = 1 + k;
        if header.get(n_tenders_col) != Some("n_tenders") {
            return Err(CoalitionError::Table("expected n_tenders after member columns".into()));
        }
        let has_label = header.get(n_tenders_col + 1) == Some("label");
        let first_feature = n_tenders_col + 1 + usize::from(has_label);
        let names: Vec<String> = header.iter().skip(first_feature).map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(table_err)?;
            let line = i + 2;
            let bad = |what: &str| CoalitionError::Table(format!("line {line}: {what}"));
            let label = if has_label {
                match &rec[n_tenders_col + 1] {
                    "" => None,
                    s => Some(s.parse::<CoalitionLabel>().map_err(|e| bad(&e))?),
                }
            } else {
                None
            };
            let values = rec
                .iter()
                .skip(first_feature)
                .map(|v| v.parse::<f64>().ok().filter(|x| x.is_finite()))
                .collect::<Option<Vec<f64>>>()
                .ok_or_else(|| bad("non-finite or non-numeric feature value"))?;
            rows.push(FeatureRow {
                coalition_id: rec[0].to_string(),
                members: (1..=k).map(|i| rec[i].to_string()).collect(),
                n_tenders: rec[n_tenders_col]
                    .parse()
                    .map_err(|_| bad("n_tenders is not an integer"))?,
                label,
                values,
            });
        }
        Ok(FeatureTable { names, rows })
    }
}

/// Enumerate, extract, screen, aggregate and label every coalition.
/// Mixed coalitions are kept with their label.
pub fn build_feature_table(
    dataset: &Dataset,
    config: &FeatureConfig,
) -> Result<FeatureTable, CoalitionError> {
    check_params(config.k, config.min_joint)?;
    let names = feature_names(config.stats);
    if dataset.is_empty() {
        return Ok(FeatureTable { names, rows: Vec::new() });
    }
    let index = build_index(dataset);
    let coalitions = enumerate_coalitions(&index, config.k, config.min_joint)?;
    let rows = coalitions
        .par_iter()
        .enumerate()
        .map(|(i, c)| {
            let vectors = coalition_screens(c, dataset)?;
            Ok(FeatureRow {
                coalition_id: (i + 1).to_string(),
                members: c.member_ids(dataset.firms()).into_iter().map(String::from).collect(),
                n_tenders: c.n_tenders(),
                label: Some(label_coalition(c, dataset)),
                values: aggregate(&vectors, config.stats)?,
            })
        })
        .collect::<Result<Vec<_>, CoalitionError>>()?;
    Ok(FeatureTable { names, rows })
}
