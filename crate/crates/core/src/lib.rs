//! Learning decision rule sets in disjunctive normal form with a two-layer
//! sparse rules network.
//!
//! The pipeline is:
//!
//! 1. [`feature_codec`] turns a raw CSV table into binary features
//!    (one-hot categories, thermometer-coded quantile thresholds).
//! 2. [`network`] holds the Rules Layer (each neuron a conjunction) and the
//!    OR Layer (a disjunction over selected neurons).
//! 3. [`gates`] supplies hard-concrete gates that drive weights to exact zero.
//! 4. [`trainer`] runs alternating two-phase Adam training.
//! 5. [`ruleset`] reads the trained network back out as IF-THEN rules.
//! 6. [`experiments`] does cross-validation, λ sweeps and Pareto frontiers.

pub mod error;
pub mod experiments;
pub mod feature_codec;
pub mod gates;
pub mod model_io;
pub mod network;
pub mod ruleset;
pub mod trainer;

pub use error::{Error, Result};
pub use feature_codec::{BinFeatureMap, BinarizedDataset, ColumnKind, ColumnSpec, RawTable, Schema};
pub use gates::{GateBank, HardConcrete};
pub use network::DrNet;
pub use ruleset::{ComplexityReport, Predicate, Rule, RuleSet};
pub use trainer::{train, TrainConfig, TrainLog, TrainOutcome};
