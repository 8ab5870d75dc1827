//! Microscopic single-intersection traffic simulator and benchmark harness
//! for traffic signal control.
//!
//! The pieces, bottom up:
//! - [`network`]: static topology, phases, conflicts, scenario documents;
//! - [`dynamics`]: vehicles, spawning, and car following;
//! - [`signal`]: the phase state machine and classical policies;
//! - [`observe`]: feature vectors and top-down rasters;
//! - [`env`]: the step/reset control loop with a diff-waiting reward;
//! - [`metrics`]: the six evaluation metrics;
//! - [`controller`], [`learner`], [`batch`]: policies, tabular Q-learning,
//!   and multi-seed evaluation.

pub mod batch;
pub mod cli;
pub mod controller;
pub mod dynamics;
pub mod env;
pub mod error;
pub mod learner;
pub mod metrics;
pub mod network;
pub mod observe;
pub mod scenario;
pub mod signal;

pub use error::{Error, Result};
