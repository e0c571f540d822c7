//! Erasure-coded, adaptively configured MultiPaxos with a deterministic
//! simulator and test harness.

pub mod assignment;
pub mod erasure;
pub mod harness;
pub mod quorum;
pub mod simnet;
pub mod tuner;
pub mod protocol;
