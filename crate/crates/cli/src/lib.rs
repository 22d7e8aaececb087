//! Library surface of the batch orchestrator, kept separate from the
//! binary so integration tests can drive full runs in-process.

pub mod config;
pub mod orchestrator;
