//! Multi-agent bias-mitigation harness: the mask → balance → answer
//! pipeline, single- and multi-agent baselines, BBQ/StereoSet ingestion and
//! scoring, cost accounting, and a resumable experiment runner.
//!
//! Model access is abstracted behind [`backend::Backend`]; everything above
//! it is deterministic given a deterministic backend, which is what the
//! replay-based test suites rely on.

pub mod accounting;
pub mod agents;
pub mod backend;
pub mod baselines;
pub mod datasets;
pub mod fixtures;
pub mod metrics;
pub mod parse;
pub mod prompts;
pub mod runner;
pub mod types;
