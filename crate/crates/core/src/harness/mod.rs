//! Scenario configuration, deterministic orchestration, path persistence,
//! statistical suites and the pieces the CLI is built from.

pub mod bundle;
pub mod config;
pub mod paths;
pub mod runner;
pub mod scenario;
pub mod suite;
