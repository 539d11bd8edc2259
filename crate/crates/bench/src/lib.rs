//! Benchmark harness around `mssp-core`: dataset ingestion, synthetic
//! sites, the experiment runner and report emission.

pub mod config;
pub mod ingest;
pub mod report;
pub mod runner;
pub mod site;
pub mod synth;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "MSSP_OUT_DIR";
