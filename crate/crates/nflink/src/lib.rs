//! Experiment runner around [`nflink_core`]: TOML scenario configs, seeded
//! parallel Monte Carlo campaigns and CSV outputs.

pub mod config;
mod error;
pub mod experiment;
pub mod io;

pub use error::{CliError, Result};
