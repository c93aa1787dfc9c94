//! Data-efficient quickest detection of outlying sequences in sensor networks.
//!
//! Each sensor runs a DE-CuSum statistic that sleeps while negative, censors
//! its uplink below a local level, and a fusion center combines the uplinks
//! with a max, sum or all-of rule. The crate simulates these policies and
//! estimates their false alarm rate, detection delay, duty cycle and
//! transmission cost, with an exact lattice oracle for discrete sensors.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod detector;
pub mod error;
pub mod estimate;
pub mod fusion;
pub mod lattice;
pub mod metrics;
pub mod model;
pub mod report;
pub mod sim;
pub mod verify;

pub use error::{Error, Result};
pub use estimate::Estimate;
pub use fusion::{FusionPolicy, FusionRule};
pub use model::{ChangePoint, Density, Scenario, SensorModel};
