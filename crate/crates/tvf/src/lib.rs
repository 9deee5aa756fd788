//! Command-line tooling around `tvf-core`: datasets, checkpoints, run
//! configuration and the `tvf` binary's commands.

pub mod archive;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod parallel;
pub mod pgm;
pub mod report;
