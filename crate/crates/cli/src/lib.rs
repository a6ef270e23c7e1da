//! Command-line layer: run configuration, the five subcommands, and the
//! mapping from failures to exit codes.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{
    cmd_ablate, cmd_classify_stream, cmd_eval, cmd_generate, cmd_train, load_dataset, median, time_advantage,
    AblationCell, AblationResult, Axis, EvalSummary, StreamResult, TrainPhase,
};
pub use config::{AblationConfig, RunConfig};
pub use error::{CliError, CliResult};
