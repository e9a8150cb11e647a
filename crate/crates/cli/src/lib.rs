//! Command-line front end: CSV datasets, JSON model files and the
//! `fit`, `predict`, `simulate` and `evaluate` commands.

pub mod commands;
pub mod error;
pub mod io;
pub mod model_file;

pub use commands::{cmd_evaluate, cmd_fit, cmd_predict, cmd_simulate, run, Cli, Command};
pub use error::{CliError, CliResult};
pub use model_file::ModelFile;

/// Environment variable holding the worker thread count.
pub const THREADS_ENV: &str = "SPSDR_THREADS";
