use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("input out of domain: {0}")]
    InputDomain(String),
    #[error("invalid scenario config: {0}")]
    Config(String),
    #[error("placed {placed} of {requested} agents: {detail}")]
    Spawn {
        placed: usize,
        requested: usize,
        detail: String,
    },
    #[error("agent {0} is not active")]
    NotActive(usize),
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
}

pub type Result<T> = std::result::Result<T, SimError>;
