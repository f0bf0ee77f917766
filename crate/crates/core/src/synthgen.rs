//! Synthetic procurement markets with a known cartel.
//!
//! Competitive tenders: every invited firm bids the tender's cost times
//! `1 + e` with `e` drawn independently from a symmetric noise law.
//! Collusive tenders: the bidders are cartel members (plus optional
//! outsiders), one designated winner bids like a competitive firm and every
//! other member places a cover bid at `w (1 + d + u)`, where the markup `d`
//! is drawn once per tender uniformly from `[delta_min, delta_max]` and
//! `u ~ N(0, cover_noise)` is clamped so every cover stays inside the band.
//!
//! Tender costs are `cost_base * exp(cost_dispersion * z)` with standard
//! normal `z`, so bids are comparable only within a tender.

use std::str::FromStr;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{BidRow, Dataset, Provenance};
use crate::rng::{rng_from_seed, Rng};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid market parameters: {0}")]
    InvalidParams(String),
    #[error("unknown preset `{name}`; available: {available}")]
    UnknownPreset { name: String, available: String },
}

/// Relative noise of competitive bids. Both laws are symmetric with standard
/// deviation `noise_sd` and are truncated at four standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseLaw {
    Normal,
    Uniform,
}

impl FromStr for NoiseLaw {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "normal" => Ok(NoiseLaw::Normal),
            "uniform" => Ok(NoiseLaw::Uniform),
            other => Err(format!("unknown noise law `{other}` (expected normal or uniform)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MarketParams {
    pub n_firms: usize,
    pub n_tenders: usize,
    pub bidders_min: usize,
    pub bidders_max: usize,
    pub cost_base: f64,
    pub cost_dispersion: f64,
    pub noise_sd: f64,
    pub noise_law: NoiseLaw,
    /// Firm ordinals (0-based, below `n_firms`) forming the cartel.
    pub cartel: Vec<usize>,
    /// Fraction of tenders that are rigged; the count is rounded.
    pub collusion_share: f64,
    pub delta_min: f64,
    pub delta_max: f64,
    /// Standard deviation of the per-cover scatter around the tender's markup.
    pub cover_noise: f64,
    /// Probability that a rigged tender is poorly coordinated: the covers
    /// are then priced like competitive bids, though still flagged.
    pub cover_failure: f64,
    /// Non-cartel firms added to each rigged tender. They bid competitively
    /// and are not flagged.
    pub outsiders: usize,
    /// Whether cartel members are also invited to competitive tenders.
    pub cartel_competes: bool,
    pub seed: u64,
}

impl Default for MarketParams {
    fn default() -> Self {
        Self {
            n_firms: 12,
            n_tenders: 300,
            bidders_min: 5,
            bidders_max: 5,
            cost_base: 1000.0,
            cost_dispersion: 0.3,
            noise_sd: 0.08,
            noise_law: NoiseLaw::Normal,
            cartel: (0..4).collect(),
            collusion_share: 0.5,
            delta_min: 0.02,
            delta_max: 0.05,
            cover_noise: 0.002,
            cover_failure: 0.0,
            outsiders: 0,
            cartel_competes: false,
            seed: 0,
        }
    }
}

impl MarketParams {
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn n_collusive_tenders(&self) -> usize {
        (self.collusion_share * self.n_tenders as f64).round() as usize
    }

    fn competitive_pool(&self) -> Vec<usize> {
        (0..self.n_firms)
            .filter(|f| self.cartel_competes || !self.cartel.contains(f))
            .collect()
    }

    pub fn check(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidParams(m));
        if self.n_firms == 0 || self.n_tenders == 0 {
            return bad("need at least one firm and one tender".into());
        }
        if !(0.0..=1.0).contains(&self.collusion_share) {
            return bad(format!("collusion share {} is outside [0, 1]", self.collusion_share));
        }
        if !(self.delta_min > 0.0 && self.delta_min < self.delta_max && self.delta_max.is_finite()) {
            return bad(format!(
                "cover band needs 0 < delta_min < delta_max, got [{}, {}]",
                self.delta_min, self.delta_max
            ));
        }
        if !(self.cost_base > 0.0 && self.cost_base.is_finite()) {
            return bad("cost base must be positive".into());
        }
        if !(self.cost_dispersion >= 0.0 && self.cost_dispersion <= 2.0) {
            return bad("cost dispersion must lie in [0, 2]".into());
        }
        if !(0.0..=1.0).contains(&self.cover_failure) {
            return bad(format!("cover failure rate {} is outside [0, 1]", self.cover_failure));
        }
        if !(self.cover_noise >= 0.0 && self.cover_noise.is_finite()) {
            return bad("cover noise must be non-negative".into());
        }
        // truncation at four sd keeps 1 + e positive
        if !(self.noise_sd >= 0.0 && 4.0 * self.noise_sd < 1.0) {
            return bad(format!("noise sd {} must lie in [0, 0.25)", self.noise_sd));
        }
        if self.bidders_min < 2 || self.bidders_min > self.bidders_max {
            return bad(format!(
                "bidder range [{}, {}] needs 2 <= min <= max",
                self.bidders_min, self.bidders_max
            ));
        }
        let mut members = self.cartel.clone();
        members.sort_unstable();
        members.dedup();
        if members.len() != self.cartel.len() {
            return bad("cartel lists a firm twice".into());
        }
        if members.last().is_some_and(|&m| m >= self.n_firms) {
            return bad(format!("cartel refers to firms beyond the pool of {}", self.n_firms));
        }
        let n_collusive = self.n_collusive_tenders();
        if n_collusive > 0 {
            if self.cartel.len() < 2 {
                return bad("a rigged tender needs a cartel of at least two firms".into());
            }
            if self.outsiders > self.n_firms - self.cartel.len() {
                return bad(format!(
                    "{} outsiders requested but only {} firms are outside the cartel",
                    self.outsiders,
                    self.n_firms - self.cartel.len()
                ));
            }
        }
        if n_collusive < self.n_tenders && self.competitive_pool().len() < self.bidders_min {
            return bad(format!(
                "competitive tenders need {} bidders but only {} firms are eligible",
                self.bidders_min,
                self.competitive_pool().len()
            ));
        }
        Ok(())
    }

    fn noise(&self, rng: &mut Rng) -> f64 {
        let z: f64 = match self.noise_law {
            NoiseLaw::Normal => StandardNormal.sample(rng),
            NoiseLaw::Uniform => rng.random_range(-3f64.sqrt()..3f64.sqrt()),
        };
        self.noise_sd * z.clamp(-4.0, 4.0)
    }
}

pub fn firm_id(f: usize) -> String {
    format!("F{:03}", f + 1)
}

pub fn tender_id(t: usize) -> String {
    format!("T{:05}", t + 1)
}

/// Generates a market. Fully determined by `params` including the seed.
pub fn gen_market(params: &MarketParams) -> Result<Dataset, SynthError> {
    params.check()?;
    let mut rng = rng_from_seed(params.seed);
    let mut rigged = vec![false; params.n_tenders];
    rigged[..params.n_collusive_tenders()].iter_mut().for_each(|r| *r = true);
    rigged.shuffle(&mut rng);

    let pool = params.competitive_pool();
    let outsiders: Vec<usize> = (0..params.n_firms).filter(|f| !params.cartel.contains(f)).collect();
    let mut rows = Vec::new();
    for (t, &is_rigged) in rigged.iter().enumerate() {
        let z: f64 = StandardNormal.sample(&mut rng);
        let cost = params.cost_base * (params.cost_dispersion * z).exp();
        let size = rng.random_range(params.bidders_min..=params.bidders_max);
        let mut push = |firm: usize, bid: f64, flag: bool| {
            rows.push(BidRow {
                tender_id: tender_id(t),
                firm_id: firm_id(firm),
                bid,
                rigged: flag,
            })
        };
        if is_rigged {
            let mut members: Vec<usize> =
                params.cartel.choose_multiple(&mut rng, size.min(params.cartel.len())).copied().collect();
            members.sort_unstable();
            let winner = rng.random_range(0..members.len());
            let w = cost * (1.0 + params.noise(&mut rng));
            let markup = rng.random_range(params.delta_min..=params.delta_max);
            let failed = params.cover_failure > 0.0 && rng.random_bool(params.cover_failure);
            for (i, &f) in members.iter().enumerate() {
                let bid = if i == winner {
                    w
                } else if failed {
                    cost * (1.0 + params.noise(&mut rng))
                } else {
                    let u: f64 = StandardNormal.sample(&mut rng);
                    w * (1.0 + (markup + params.cover_noise * u).clamp(params.delta_min, params.delta_max))
                };
                push(f, bid, true);
            }
            let mut extra: Vec<usize> =
                outsiders.choose_multiple(&mut rng, params.outsiders).copied().collect();
            extra.sort_unstable();
            for f in extra {
                push(f, cost * (1.0 + params.noise(&mut rng)), false);
            }
        } else {
            let mut firms: Vec<usize> = pool.choose_multiple(&mut rng, size.min(pool.len())).copied().collect();
            firms.sort_unstable();
            for f in firms {
                push(f, cost * (1.0 + params.noise(&mut rng)), false);
            }
        }
    }
    let provenance = Provenance {
        source: Some(format!("synthetic market, seed {}", params.seed)),
        parsed_at: 0,
    };
    Dataset::from_rows(rows, None, provenance).map_err(|e| SynthError::InvalidParams(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Scenario {
    pub name: &'static str,
    pub description: &'static str,
    pub params: MarketParams,
}

/// Named presets. `complete`, `incomplete` and `partial` cover the three
/// cartel archetypes; `default` is the small reference market and
/// `acceptance` a larger market with enough coalitions of both classes to
/// train on.
pub fn gen_scenario_suite() -> Vec<Scenario> {
    let base = MarketParams::default();
    vec![
        Scenario {
            name: "default",
            description: "12 firms, 4-firm cartel, 300 tenders of 5 bidders, half rigged",
            params: base.clone(),
        },
        Scenario {
            name: "complete",
            description: "every firm is in the cartel and every tender is rigged",
            params: MarketParams {
                n_firms: 8,
                n_tenders: 200,
                bidders_min: 4,
                bidders_max: 6,
                cartel: (0..8).collect(),
                collusion_share: 1.0,
                ..base.clone()
            },
        },
        Scenario {
            name: "incomplete",
            description: "rigged tenders also contain one competitive outsider",
            params: MarketParams {
                n_firms: 12,
                n_tenders: 300,
                bidders_min: 3,
                bidders_max: 4,
                cartel: (0..5).collect(),
                outsiders: 1,
                ..base.clone()
            },
        },
        Scenario {
            name: "partial",
            description: "30% of tenders rigged; cartel members also bid competitively elsewhere",
            params: MarketParams {
                collusion_share: 0.3,
                cartel_competes: true,
                ..base.clone()
            },
        },
        Scenario {
            name: "acceptance",
            description: "40 firms, 10-firm cartel, 1300 tenders; sized for training runs",
            params: acceptance_params(),
        },
    ]
}

fn acceptance_params() -> MarketParams {
    MarketParams {
        n_firms: 40,
        n_tenders: 1300,
        bidders_min: 4,
        bidders_max: 6,
        cartel: (0..10).collect(),
        collusion_share: 0.1,
        cover_failure: 0.2,
        ..MarketParams::default()
    }
}

pub fn preset(name: &str) -> Result<MarketParams, SynthError> {
    let suite = gen_scenario_suite();
    suite
        .iter()
        .find(|s| s.name == name)
        .map(|s| s.params.clone())
        .ok_or_else(|| SynthError::UnknownPreset {
            name: name.to_string(),
            available: suite.iter().map(|s| s.name).collect::<Vec<_>>().join(", "),
        })
}
