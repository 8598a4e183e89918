//! File formats, dataset persistence, configuration and the subcommands of
//! the `eqgs` binary.

pub mod checkpoint;
pub mod cli;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod eqdf;
pub mod error;
pub mod ply;
pub mod selfcheck;

pub use error::{CliError, Result};

#[cfg(test)]
mod roundtrip;
