//! Coalition-based screening of procurement bids for bid-rigging cartels.
//!
//! The crate turns raw bid data into coalition-level features and trains
//! classifiers that separate collusive from competitive coalitions:
//!
//! * [`data`] parses and validates bid CSVs into an immutable [`Dataset`].
//! * [`index`] builds per-firm tender bitsets used for enumeration.
//! * [`screens`] computes the nine tender-based screens.
//! * [`coalitions`] enumerates coalitions and aggregates their screens.
//! * [`learners`] holds the from-scratch classifiers and the stacked ensemble.
//! * [`pipeline`] runs the repeated balance/split/fit/evaluate protocol.
//! * [`synthgen`] generates synthetic markets with known cartels.

pub mod coalitions;
pub mod data;
pub mod index;
pub mod learners;
pub mod pipeline;
pub mod rng;
pub mod screens;
pub mod synthgen;

pub use coalitions::{
    build_feature_table, CoalitionLabel, FeatureConfig, FeatureTable, StatisticSet,
};
pub use data::{parse_dataset, validate, ColumnMap, Dataset};
pub use screens::{screen_vector, Screen, ScreenVector};
