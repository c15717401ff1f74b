use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config {path}: {detail}")]
    Config { path: PathBuf, detail: String },
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Agent(#[from] svo_agents::AgentError),
    #[error(transparent)]
    Sim(#[from] svo_sim::SimError),
    #[error(transparent)]
    Nn(#[from] svo_nn::NnError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Parse { path: PathBuf, detail: String },
    #[error("log line {line}: {detail}")]
    Log { line: usize, detail: String },
}

impl HarnessError {
    /// Short machine-readable category for one-line CLI errors.
    pub fn kind(&self) -> &'static str {
        match self {
            HarnessError::Config { .. } | HarnessError::Invalid(_) => "config",
            HarnessError::Agent(_) | HarnessError::Sim(_) | HarnessError::Nn(_) => "runtime",
            HarnessError::Io { .. } => "io",
            HarnessError::Parse { .. } | HarnessError::Log { .. } => "parse",
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}
