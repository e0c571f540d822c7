//! Scenario runner, metrics, and property checkers.

pub mod chaos;
pub mod client;
pub mod explore;
pub mod linearize;
pub mod metrics;
pub mod scenario;
pub mod staleness;
pub mod world;

pub use client::OpRecord;
pub use linearize::Verdict;
pub use metrics::Metrics;
pub use scenario::{Scenario, ScenarioError};
pub use world::{run, RunOutput, World};
