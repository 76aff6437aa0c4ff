//! Deterministic federated learning simulator with zone-based poisoning
//! defense, robust aggregation baselines and data-poisoning attacks.

// `!(x > 0.0)` style checks also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod attacks;
pub mod baselines;
pub mod config;
pub mod data;
pub mod error;
pub mod metrics;
pub mod nn;
pub mod seed;
pub mod sim;
pub mod zones;

pub use config::{DatasetConfig, ExperimentConfig};
pub use error::{Error, Result};
