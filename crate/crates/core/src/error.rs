use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch{}: {what}", agent_suffix(*.agent))]
    Dimension { agent: Option<usize>, what: String },

    #[error("covariance is not positive semi-definite{}: {reason}", agent_suffix(*.agent))]
    NotPsd { agent: Option<usize>, reason: String },

    #[error("power iteration did not converge after {iterations} iterations (last gap {gap:e})")]
    NoConvergence { iterations: usize, gap: f64 },

    #[error("regressor matrix is rank deficient: rank {rank}, need {required}")]
    RankDeficient { rank: usize, required: usize },

    #[error("missing priority for agent {agent}")]
    MissingPriority { agent: usize },

    #[error("growth assumption (‖A‖ > 1, or ‖A‖ = 1 with noise) violated for agents {agents:?}")]
    AssumptionViolated { agents: Vec<usize> },

    #[error("invalid configuration at `{field}`: {message}")]
    InvalidConfig { field: String, message: String },

    #[error("invariant violated at step {step}{}: {message}", agent_suffix(*.agent))]
    Invariant { step: usize, agent: Option<usize>, message: String },

    #[error("empty window [{start}, {end})")]
    EmptyWindow { start: usize, end: usize },

    #[error("replicates have mixed horizons ({expected} vs {found})")]
    HorizonMismatch { expected: usize, found: usize },

    #[error("scenario parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },

    #[error("{}: {source}", .path.display())]
    Io { path: PathBuf, #[source] source: std::io::Error },
}

fn agent_suffix(agent: Option<usize>) -> String {
    match agent {
        Some(id) => format!(" (agent {id})"),
        None => String::new(),
    }
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidConfig { field: field.into(), message: message.into() }
    }

    pub(crate) fn dim(agent: Option<usize>, what: impl Into<String>) -> Self {
        Error::Dimension { agent, what: what.into() }
    }

    /// Attaches an agent id to errors that carry one and do not have it yet.
    pub fn for_agent(self, id: usize) -> Self {
        match self {
            Error::Dimension { agent: None, what } => Error::Dimension { agent: Some(id), what },
            Error::NotPsd { agent: None, reason } => Error::NotPsd { agent: Some(id), reason },
            other => other,
        }
    }
}
