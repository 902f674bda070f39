//! Pipeline driver behind the `ocularage` binary. Each subcommand is a plain
//! function so the whole pipeline can also be driven from tests.

pub mod bench;
pub mod commands;
pub mod config;
pub mod workspace;

pub use bench::{cmd_bench, BenchPair, BenchReport};
pub use commands::{cmd_eval, cmd_preprocess, cmd_split, cmd_synth, cmd_train, PreprocessSummary};
pub use config::{RunConfig, SensorFilter, WORKSPACE_ENV};

use ocularage_core::dataman::DataError;
use ocularage_core::eval::EvalError;
use ocularage_core::multitask::TrainError;
use ocularage_core::preproc::PreprocError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Train(String),
    #[error("{0}")]
    Eval(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
            Self::Train(_) => 4,
            Self::Eval(_) => 5,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Self::Config(_) => "E_CONFIG",
            Self::Data(_) => "E_DATA",
            Self::Train(_) => "E_TRAIN",
            Self::Eval(_) => "E_EVAL",
        }
    }

    /// `E_<KIND>: <message>` on a single line.
    pub fn line(&self) -> String {
        let msg = self.to_string().replace(['\n', '\r'], " ");
        format!("{}: {msg}", self.code())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<PreprocError> for CliError {
    fn from(e: PreprocError) -> Self {
        Self::Data(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        Self::Train(e.to_string())
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        Self::Eval(e.to_string())
    }
}

pub(crate) fn io_err(path: &std::path::Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}
