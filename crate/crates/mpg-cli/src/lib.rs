//! Experiment orchestration library behind the `mpg` binary: configuration
//! parsing, seeded run/sweep execution, oracle certification, closed-form
//! bound tables, and deterministic CSV/JSON emission.

pub mod config;
pub mod emit;
pub mod runner;
