//! The `satstereo` command-line workflows as a library, so tests can drive
//! them in-process.

pub mod commands;
pub mod config;
pub mod error;

pub use commands::{run, Cli, Command, EvalRecord};
pub use config::{DataPaths, Preset, RunConfig, SynthSetSpec};
pub use error::{CmdResult, Failure};
