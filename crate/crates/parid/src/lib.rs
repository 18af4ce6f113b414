//! File formats, configuration, parallel execution and the experiment
//! harness around [`parid_core`].

pub mod cli;
pub mod config;
pub mod error;
pub mod experiments;
pub mod io;
pub mod runner;

pub use error::{CliError, CliResult};
pub use runner::Parallel;
