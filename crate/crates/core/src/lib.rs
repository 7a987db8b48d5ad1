//! Uplink simulator for a cell-free massive MIMO radio stripe.
//!
//! APs along the walls of a room each hold `N` antennas and estimate their
//! users' channels locally. The crate compares four receivers:
//!
//! - MRC: every AP forwards `ĥᴴy` and the CPU adds the partial sums.
//! - Centralized LMMSE: all antenna samples go to the CPU.
//! - N-LMMSE: a sequential LMMSE pass along the stripe.
//! - Q-LMMSE: LMMSE at the CPU computed from the MRC streams alone, by
//!   recovering the user Gram matrix from their sample correlation.
//!
//! [`harness::run_experiment`] drives the Monte Carlo runs and
//! [`cost`] holds the fronthaul and complexity model.

pub mod channel;
pub mod combiners;
pub mod config;
pub mod cost;
pub mod error;
pub mod estimation;
pub mod harness;
pub mod linalg;
pub mod metrics;
pub mod qlmmse;
pub mod rng;
pub mod scenario;

pub use combiners::{LmmseUcForm, NlmmseVariant, ReceiverConfig, Scheme, UcMask};
pub use config::{LinkBudget, SystemConfig};
pub use cost::CostReport;
pub use error::{Error, Result};
pub use harness::{run_experiment, sweep_snr_ld, ExperimentResult, RunOptions};
pub use metrics::SeStats;
