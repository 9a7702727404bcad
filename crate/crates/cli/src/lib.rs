//! Library surface of the command-line pipeline, kept separate from the
//! binary so integration tests can exercise ingestion, configuration,
//! and caching directly.

pub mod cache;
pub mod commands;
pub mod config;
pub mod ingest;
pub mod synth;
