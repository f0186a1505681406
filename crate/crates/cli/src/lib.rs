//! Experiment driver library behind the `tracefem` binary: configuration
//! parsing, level-loop orchestration and the verification suites.

pub mod config;
pub mod experiment;
pub mod verify;
