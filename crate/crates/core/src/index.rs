//! Per-firm tender participation bitsets.

use crate::data::Dataset;

/// Fixed-width bitset over tender ordinals.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TenderSet {
    words: Vec<u64>,
}

impl TenderSet {
    pub fn new(n_bits: usize) -> Self {
        Self {
            words: vec![0; n_bits.div_ceil(64)],
        }
    }

    pub fn insert(&mut self, bit: usize) {
        self.words[bit / 64] |= 1u64 << (bit % 64);
    }

    pub fn contains(&self, bit: usize) -> bool {
        self.words
            .get(bit / 64)
            .is_some_and(|w| w & (1u64 << (bit % 64)) != 0)
    }

    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Writes `self ∩ other` into `out` and returns its popcount.
    pub fn intersect_into(&self, other: &TenderSet, out: &mut TenderSet) -> usize {
        let mut n = 0;
        for ((o, a), b) in out.words.iter_mut().zip(&self.words).zip(&other.words) {
            *o = a & b;
            n += o.count_ones() as usize;
        }
        n
    }

    /// Popcount of `self ∩ other` without materializing it.
    pub fn intersection_count(&self, other: &TenderSet) -> usize {
        self.words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a & b).count_ones() as usize)
            .sum()
    }

    /// Set bits in ascending order.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut rest = w;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let tz = rest.trailing_zeros() as usize;
                rest &= rest - 1;
                Some(wi * 64 + tz)
            })
        })
    }
}

/// For every firm ordinal, the set of tender ordinals it bid in. Tender
/// ordinals follow the dataset's tender order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParticipationIndex {
    tender_ids: Vec<String>,
    firm_ids: Vec<String>,
    sets: Vec<TenderSet>,
}

impl ParticipationIndex {
    pub fn tender_ids(&self) -> &[String] {
        &self.tender_ids
    }

    pub fn firm_ids(&self) -> &[String] {
        &self.firm_ids
    }

    pub fn n_tenders(&self) -> usize {
        self.tender_ids.len()
    }

    pub fn n_firms(&self) -> usize {
        self.firm_ids.len()
    }

    pub fn tenders_of(&self, firm: usize) -> &TenderSet {
        &self.sets[firm]
    }
}

pub fn build_index(dataset: &Dataset) -> ParticipationIndex {
    let n_tenders = dataset.tenders().len();
    let mut sets = vec![TenderSet::new(n_tenders); dataset.firms().len()];
    for (t, tender) in dataset.tenders().iter().enumerate() {
        for &f in tender.firm_ords() {
            sets[f].insert(t);
        }
    }
    ParticipationIndex {
        tender_ids: dataset.tenders().iter().map(|t| t.id().to_string()).collect(),
        firm_ids: dataset.firms().to_vec(),
        sets,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{fixtures, BidRow, Dataset, Provenance};
    use proptest::prelude::*;

    #[test]
    fn figure_one_participation() {
        let ds = fixtures::figure_one();
        let idx = build_index(&ds);
        let f1 = idx.firm_ids().iter().position(|f| f == "F1").unwrap();
        assert_eq!(idx.tenders_of(f1).count(), 4);
        let ids: Vec<&str> = idx.tenders_of(f1).iter().map(|t| idx.tender_ids()[t].as_str()).collect();
        assert_eq!(ids, ["T1", "T2", "T3", "T6"]);
    }

    #[test]
    fn saturated_and_identical_firms() {
        let mut rows = Vec::new();
        for t in 0..130 {
            for f in ["A", "B"] {
                rows.push(BidRow {
                    tender_id: format!("T{t}"),
                    firm_id: f.into(),
                    bid: 1.0 + t as f64,
                    rigged: false,
                });
            }
        }
        let ds = Dataset::from_rows(rows, None, Provenance::default()).unwrap();
        let idx = build_index(&ds);
        assert_eq!(idx.tenders_of(0).count(), 130);
        assert!((0..130).all(|t| idx.tenders_of(0).contains(t)));
        assert_eq!(idx.tenders_of(0), idx.tenders_of(1));
    }

    proptest! {
        #[test]
        fn bits_match_naive_scan(
            cells in proptest::collection::vec(proptest::bool::ANY, 12 * 30),
            n_firms in 1usize..=12,
            n_tenders in 1usize..=30,
        ) {
            let mut rows = Vec::new();
            for t in 0..n_tenders {
                for f in 0..n_firms {
                    if cells[t * 12 + f] {
                        rows.push(BidRow {
                            tender_id: format!("T{t:02}"),
                            firm_id: format!("F{f:02}"),
                            bid: 1.0,
                            rigged: false,
                        });
                    }
                }
            }
            let ds = Dataset::from_rows(rows, None, Provenance::default()).unwrap();
            let idx = build_index(&ds);
            for (fo, firm) in idx.firm_ids().iter().enumerate() {
                for (to, tender) in ds.tenders().iter().enumerate() {
                    let naive = tender.rows().iter().any(|r| &r.firm_id == firm);
                    prop_assert_eq!(idx.tenders_of(fo).contains(to), naive);
                }
                let naive_count = ds.rows().filter(|r| &r.firm_id == firm).count();
                prop_assert_eq!(idx.tenders_of(fo).count(), naive_count);
            }
        }
    }
}
