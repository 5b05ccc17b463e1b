//! Library side of the `chainperf` command: document parsing, the analysis
//! commands, and output rendering.

pub mod commands;
pub mod document;
pub mod output;

use chainperf_core::alloc::AllocError;
use chainperf_core::deploy::DeployError;
use chainperf_core::qnet::QueueError;
use chainperf_core::search::SearchError;
use thiserror::Error;

pub use document::ChainDocument;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Infeasible(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Infeasible(_) => 3,
            CliError::Numerical(_) | CliError::Io(_) => 4,
        }
    }
}

impl From<QueueError> for CliError {
    fn from(e: QueueError) -> Self {
        match e {
            QueueError::Overloaded { .. } | QueueError::Unstable { .. } => CliError::Infeasible(e.to_string()),
            QueueError::SingularRouting(_) | QueueError::InvalidChain(_) => CliError::Validation(e.to_string()),
        }
    }
}

impl From<AllocError> for CliError {
    fn from(e: AllocError) -> Self {
        match e {
            AllocError::Queue(q) => q.into(),
            AllocError::CapBelowFloor { .. } | AllocError::Infeasible { .. } => CliError::Infeasible(e.to_string()),
        }
    }
}

impl From<DeployError> for CliError {
    fn from(e: DeployError) -> Self {
        match e {
            DeployError::Srn(_) => CliError::Numerical(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SearchError> for CliError {
    fn from(e: SearchError) -> Self {
        match e {
            SearchError::Deploy(d) => d.into(),
            SearchError::Queue(q) => q.into(),
            SearchError::InvalidParams(_) => CliError::Validation(e.to_string()),
            SearchError::EmptyCandidateSet { .. } | SearchError::NoFeasibleConfig { .. } => {
                CliError::Infeasible(e.to_string())
            }
        }
    }
}
