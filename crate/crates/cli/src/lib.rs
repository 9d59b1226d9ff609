//! Command-line entry points for the graph-classification toolkit.
//!
//! Five subcommands: `generate` (synthetic datasets), `train` (k-fold
//! protocol with curve/metric/checkpoint artifacts), `eval` (checkpoint on
//! a dataset), `search` (grid search over the configuration space), and
//! `report` (comparison tables from run manifests).
//!
//! Every command is deterministic under a fixed seed: rerunning `train`
//! with identical inputs produces a byte-identical `metrics.json`.

pub mod args;
pub mod checkpoint;
pub mod commands;
pub mod manifest;
pub mod report;
pub mod search;

use thiserror::Error;

/// Process exit codes: 2 for validation problems (bad config, bad input
/// files, bad flags), 3 for runtime failures during training or I/O.
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(format!("io error: {e}"))
    }
}

impl From<hagnet_core::graph::GraphError> for CliError {
    fn from(e: hagnet_core::graph::GraphError) -> Self {
        use hagnet_core::graph::GraphError;
        match e {
            GraphError::Io { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<hagnet_core::model::ModelError> for CliError {
    fn from(e: hagnet_core::model::ModelError) -> Self {
        use hagnet_core::model::ModelError;
        match e {
            ModelError::Config { .. }
            | ModelError::UnknownBaseline(_)
            | ModelError::LabelOutOfVocab { .. } => CliError::Validation(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<hagnet_core::training::TrainError> for CliError {
    fn from(e: hagnet_core::training::TrainError) -> Self {
        use hagnet_core::training::TrainError;
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Graph(g) => g.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(format!("json error: {e}"))
    }
}
