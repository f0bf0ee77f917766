//! Procurement bid data: CSV parsing, validation and the immutable [`Dataset`].
//!
//! Input is one row per submitted bid with the columns
//! `tender_id,firm_id,bid,rigged_flag` (names remappable through
//! [`ColumnMap`]). Rows are grouped by tender in order of first appearance and
//! row order inside a tender is preserved.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("line {line}: malformed CSV row: {message}")]
    Malformed { line: u64, message: String },
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: bid `{value}` is not a strictly positive number")]
    InvalidBid { line: u64, value: String },
    #[error("line {line}: rigged flag `{value}` must be 0 or 1")]
    InvalidFlag { line: u64, value: String },
    #[error("line {line}: duplicate bid by firm `{firm}` in tender `{tender}`")]
    DuplicatePair { line: u64, tender: String, firm: String },
    #[error("empty {0} id")]
    EmptyId(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Column names of the input CSV.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub tender_id: String,
    pub firm_id: String,
    pub bid: String,
    pub rigged_flag: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            tender_id: "tender_id".into(),
            firm_id: "firm_id".into(),
            bid: "bid".into(),
            rigged_flag: "rigged_flag".into(),
        }
    }
}

/// One submitted bid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BidRow {
    pub tender_id: String,
    pub firm_id: String,
    /// Submitted value as-is (price or discount points).
    pub bid: f64,
    /// True when the firm was a cartel participant for this bid.
    pub rigged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tender {
    id: String,
    rows: Vec<BidRow>,
    // ordinal of each row's firm in `Dataset::firms`
    firm_ords: Vec<usize>,
}

impl Tender {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn rows(&self) -> &[BidRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub(crate) fn firm_ords(&self) -> &[usize] {
        &self.firm_ords
    }

    /// Row of firm ordinal `firm`, if it bid here.
    pub(crate) fn row_of(&self, firm: usize) -> Option<&BidRow> {
        self.firm_ords
            .iter()
            .position(|&f| f == firm)
            .map(|i| &self.rows[i])
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub source: Option<String>,
    /// Seconds since the Unix epoch at construction.
    pub parsed_at: u64,
}

impl Provenance {
    pub fn now(source: Option<String>) -> Self {
        let parsed_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Self { source, parsed_at }
    }
}

/// Immutable collection of tenders. Firms are kept in ascending id order and
/// a firm's position in that list is its ordinal everywhere in the crate.
#[derive(Debug, Clone)]
pub struct Dataset {
    tenders: Vec<Tender>,
    firms: Vec<String>,
    provenance: Provenance,
}

/// Equality ignores provenance.
impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.tenders == other.tenders && self.firms == other.firms
    }
}

impl Dataset {
    /// Builds a dataset from rows, checking every row invariant. `lines`
    /// gives the source line of each row for error messages; when absent
    /// the 1-based row position is used.
    pub fn from_rows(
        rows: Vec<BidRow>,
        lines: Option<&[u64]>,
        provenance: Provenance,
    ) -> Result<Self, DataError> {
        let line_of = |i: usize| lines.map_or(i as u64 + 1, |l| l[i]);
        let mut tender_pos: HashMap<String, usize> = HashMap::new();
        let mut grouped: Vec<(String, Vec<BidRow>)> = Vec::new();
        let mut seen: HashSet<(String, String)> = HashSet::new();
        for (i, row) in rows.into_iter().enumerate() {
            if row.tender_id.is_empty() {
                return Err(DataError::EmptyId("tender"));
            }
            if row.firm_id.is_empty() {
                return Err(DataError::EmptyId("firm"));
            }
            if !(row.bid.is_finite() && row.bid > 0.0) {
                return Err(DataError::InvalidBid {
                    line: line_of(i),
                    value: row.bid.to_string(),
                });
            }
            if !seen.insert((row.tender_id.clone(), row.firm_id.clone())) {
                return Err(DataError::DuplicatePair {
                    line: line_of(i),
                    tender: row.tender_id,
                    firm: row.firm_id,
                });
            }
            let pos = *tender_pos.entry(row.tender_id.clone()).or_insert_with(|| {
                grouped.push((row.tender_id.clone(), Vec::new()));
                grouped.len() - 1
            });
            grouped[pos].1.push(row);
        }

        let mut firms: Vec<String> = seen.into_iter().map(|(_, f)| f).collect();
        firms.sort_unstable();
        firms.dedup();
        let firm_ord: HashMap<&str, usize> =
            firms.iter().enumerate().map(|(i, f)| (f.as_str(), i)).collect();
        let tenders = grouped
            .into_iter()
            .map(|(id, rows)| {
                let firm_ords = rows.iter().map(|r| firm_ord[r.firm_id.as_str()]).collect();
                Tender { id, rows, firm_ords }
            })
            .collect();
        Ok(Self { tenders, firms, provenance })
    }

    pub fn empty() -> Self {
        Self {
            tenders: Vec::new(),
            firms: Vec::new(),
            provenance: Provenance::default(),
        }
    }

    pub fn tenders(&self) -> &[Tender] {
        &self.tenders
    }

    pub fn firms(&self) -> &[String] {
        &self.firms
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    pub fn n_rows(&self) -> usize {
        self.tenders.iter().map(Tender::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.tenders.is_empty()
    }

    pub fn rows(&self) -> impl Iterator<Item = &BidRow> {
        self.tenders.iter().flat_map(|t| t.rows.iter())
    }

    /// Writes the dataset in the input CSV format, tenders in order.
    pub fn write_csv<W: Write>(&self, writer: W, columns: &ColumnMap) -> Result<(), DataError> {
        let mut w = csv::Writer::from_writer(writer);
        let csv_err = |e: csv::Error| DataError::Malformed {
            line: 0,
            message: e.to_string(),
        };
        w.write_record([
            &columns.tender_id,
            &columns.firm_id,
            &columns.bid,
            &columns.rigged_flag,
        ])
        .map_err(csv_err)?;
        for row in self.rows() {
            w.write_record([
                row.tender_id.as_str(),
                row.firm_id.as_str(),
                &format_bid(row.bid),
                if row.rigged { "1" } else { "0" },
            ])
            .map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Shortest representation that parses back to the same f64.
fn format_bid(bid: f64) -> String {
    format!("{bid:?}")
}

/// Parses a CSV stream into a [`Dataset`].
pub fn parse_dataset<R: Read>(
    reader: R,
    columns: &ColumnMap,
    source: Option<String>,
) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| DataError::Malformed {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let (ti, fi, bi, ri) = (
        col(&columns.tender_id)?,
        col(&columns.firm_id)?,
        col(&columns.bid)?,
        col(&columns.rigged_flag)?,
    );

    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| DataError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(i).unwrap_or("");
        let bid_text = field(bi);
        let bid = bid_text
            .parse::<f64>()
            .ok()
            .filter(|b| b.is_finite() && *b > 0.0)
            .ok_or_else(|| DataError::InvalidBid {
                line,
                value: bid_text.to_string(),
            })?;
        let rigged = match field(ri) {
            "1" => true,
            "0" => false,
            other => {
                return Err(DataError::InvalidFlag {
                    line,
                    value: other.to_string(),
                })
            }
        };
        rows.push(BidRow {
            tender_id: field(ti).to_string(),
            firm_id: field(fi).to_string(),
            bid,
            rigged,
        });
        lines.push(line);
    }
    Dataset::from_rows(rows, Some(&lines), Provenance::now(source))
}

/// Summary counts and warnings produced by [`validate`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub n_tenders: usize,
    pub n_firms: usize,
    pub n_rows: usize,
    /// Tenders with fewer than three bidders (unusable for 3-firm coalitions).
    pub small_tenders: Vec<String>,
    /// Tenders holding both rigged and non-rigged rows.
    pub mixed_flag_tenders: usize,
    pub warnings: Vec<String>,
}

pub fn validate(dataset: &Dataset) -> ValidationReport {
    let small_tenders: Vec<String> = dataset
        .tenders()
        .iter()
        .filter(|t| t.len() < 3)
        .map(|t| t.id().to_string())
        .collect();
    let mixed_flag_tenders = dataset
        .tenders()
        .iter()
        .filter(|t| {
            let rigged = t.rows().iter().filter(|r| r.rigged).count();
            rigged > 0 && rigged < t.len()
        })
        .count();
    let mut warnings = Vec::new();
    if dataset.is_empty() {
        warnings.push("dataset contains no tenders".to_string());
    }
    if !small_tenders.is_empty() {
        warnings.push(format!(
            "{} tender(s) have fewer than 3 bidders and cannot contribute to coalitions",
            small_tenders.len()
        ));
    }
    if mixed_flag_tenders > 0 {
        warnings.push(format!(
            "{mixed_flag_tenders} tender(s) mix rigged and non-rigged bids"
        ));
    }
    ValidationReport {
        n_tenders: dataset.tenders().len(),
        n_firms: dataset.firms().len(),
        n_rows: dataset.n_rows(),
        small_tenders,
        mixed_flag_tenders,
        warnings,
    }
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Six tenders and seven firms laid out so that F1, F2 and F3 bid
    /// together in T1, T2, T3 and T6, with F4 and F5 also bidding in T1.
    pub fn figure_one() -> Dataset {
        let layout: [(&str, &[(&str, f64)]); 6] = [
            ("T1", &[("F1", 100.0), ("F2", 104.0), ("F3", 103.0), ("F4", 110.0), ("F5", 97.0)]),
            ("T2", &[("F1", 210.0), ("F2", 200.0), ("F3", 205.0)]),
            ("T3", &[("F1", 52.0), ("F2", 50.0), ("F3", 55.0), ("F6", 51.0)]),
            ("T4", &[("F2", 80.0), ("F4", 82.0), ("F7", 79.0)]),
            ("T5", &[("F3", 300.0), ("F5", 310.0), ("F6", 290.0), ("F7", 305.0)]),
            ("T6", &[("F1", 75.0), ("F2", 77.0), ("F3", 76.0), ("F7", 90.0)]),
        ];
        let rows = layout
            .iter()
            .flat_map(|(t, bids)| {
                bids.iter().map(move |(f, b)| BidRow {
                    tender_id: t.to_string(),
                    firm_id: f.to_string(),
                    bid: *b,
                    rigged: false,
                })
            })
            .collect();
        Dataset::from_rows(rows, None, Provenance::default()).unwrap()
    }
}
