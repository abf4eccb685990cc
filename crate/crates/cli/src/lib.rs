//! Pipeline drivers behind the `splatdyn` binary.

pub mod config;
mod manifest;
pub mod pipeline;

use thiserror::Error;

pub use config::{Command, SceneConfig};
pub use manifest::{write_manifest, Manifest, OutputEntry};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("{context}: {source}")]
    Runtime {
        context: String,
        #[source]
        source: splatdyn_core::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime { .. } => 2,
        }
    }
}

pub(crate) trait Context<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError>;
}

impl<T> Context<T> for splatdyn_core::Result<T> {
    fn context(self, what: impl FnOnce() -> String) -> Result<T, CliError> {
        self.map_err(|source| CliError::Runtime { context: what(), source })
    }
}

/// Validates `config` for `command`, runs it and writes `manifest_<command>.json`
/// beside the outputs.
pub fn run(command: Command, config: &SceneConfig) -> Result<Manifest, CliError> {
    let errs = config.validate(command);
    if !errs.is_empty() {
        return Err(CliError::Validation(errs));
    }
    let outputs = match command {
        Command::Optimize => pipeline::cmd_optimize(config)?,
        Command::Simulate => pipeline::cmd_simulate(config)?,
        Command::Blend => pipeline::cmd_blend(config)?,
        Command::Propagate => pipeline::cmd_propagate(config)?,
        Command::Eval => pipeline::cmd_eval(config)?,
    };
    write_manifest(command, config, &outputs)
}
