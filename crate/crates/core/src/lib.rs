//! Mobility-aware multi-task decentralized federated learning for vehicular
//! networks.
//!
//! The crate simulates `H` vehicles that train `M` federated tasks at once.
//! Every communication round each task elects a cluster head vehicle (CHV)
//! that distributes its model, collects the updates of its source vehicles
//! (SOVs) over OFDMA subcarriers, aggregates them and broadcasts the result.
//!
//! Module map:
//!
//! - [`config`], [`scenario`]: configuration data model and scenario construction.
//! - [`mobility`]: Manhattan-grid mobility and CSV trace ingestion.
//! - [`radio`], [`compute`]: link rates, communication and computation costs.
//! - [`ledger`]: per-round timeline, energy bookkeeping and constraint validation.
//! - [`fl`]: synthetic tasks, local SGD, weighted aggregation and losses.
//! - [`convergence`]: one-round and K-round loss bounds and their empirical check.
//! - [`scheduler`]: leader selection with heap-based subcarrier allocation, and
//!   the equal-resource baseline.
//! - [`game`]: the task resource-allocation potential game and its solver.
//! - [`env`]: the multi-agent environment wrapped around the simulator.
//! - [`nn`], [`marl`]: MLPs with manual backprop, HAPPO and joint PPO.
//! - [`harness`]: experiment orchestration behind the `mmfl` binary.

pub mod compute;
pub mod config;
pub mod convergence;
pub mod env;
pub mod fl;
pub mod game;
pub mod harness;
pub mod ledger;
pub mod marl;
pub mod mobility;
pub mod nn;
pub mod radio;
pub mod rng;
pub mod scenario;
pub mod scheduler;

pub use config::SimConfig;
pub use scenario::{build_scenario, Scenario, Schedule};
