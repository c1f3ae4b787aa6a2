//! Hierarchical agent-based algorithm selection and hyperparameter tuning.
//!
//! Resources live in an agent tree. A query travels down the tree twice: a
//! call-for-proposal flood locates candidates, then a second flow runs
//! validation or tuning at the agents that won the first pass.

pub mod bench;
pub mod hierarchy;
pub mod ml;
pub mod oracle;
pub mod params;
pub mod protocol;
pub mod query;
pub mod seed;
pub mod tuner;
