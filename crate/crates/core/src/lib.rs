//! Cascading-failure chain statistics for transmission grids.
//!
//! The pipeline runs a probabilistic AC cascading-outage simulator over
//! sampled N-2 contingencies, turns the recorded failure chains into a
//! weighted branch-interaction graph, ranks branches with a weighted HITS
//! iteration, and checks the ranking through capacity-upgrade experiments
//! against structural centrality baselines.

pub mod acpf;
pub mod cascade;
pub mod config;
pub mod dispatch;
pub mod error;
pub mod exec;
pub mod grid;
pub mod interaction;
pub mod ranking;
pub mod structural;
pub mod validation;

pub use error::{Error, Result};
