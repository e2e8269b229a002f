//! Train, evaluate and inspect probabilistic numeric CNNs from TOML configs.

pub mod commands;
pub mod config;
pub mod dataset;

pub use commands::{eval, inspect, train, EvalArgs, EvalReport, InspectArgs, Split, TrainSummary};
pub use config::{Overrides, RunConfig};
