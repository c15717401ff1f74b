use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error(transparent)]
    Sim(#[from] svo_sim::SimError),
    #[error(transparent)]
    Nn(#[from] svo_nn::NnError),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("training diverged at {stage}: {detail}")]
    Diverged { stage: String, detail: String },
    #[error("dataset error at line {line}: {detail}")]
    Dataset { line: usize, detail: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, AgentError>;

pub(crate) fn io_err(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> AgentError + '_ {
    move |source| AgentError::Io {
        path: path.display().to_string(),
        source,
    }
}
