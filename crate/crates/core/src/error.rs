use std::fmt;

/// A single configuration problem, located by its dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub path: String,
    pub message: String,
}

impl ConfigIssue {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RetfError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("configuration has {} problem(s):\n{}", .0.len(), join_issues(.0))]
    Config(Vec<ConfigIssue>),
    #[error("constraint violated: {0}")]
    Infeasible(String),
    #[error("internal invariant breached: {0}")]
    Invariant(String),
    #[error("refused: {0}")]
    Refused(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

fn join_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  - {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl RetfError {
    /// Process exit status used by the command-line front-end.
    pub fn exit_code(&self) -> i32 {
        match self {
            RetfError::Config(_) | RetfError::Parse(_) | RetfError::InvalidScenario(_) => 2,
            RetfError::Infeasible(_) | RetfError::Refused(_) => 3,
            RetfError::Invariant(_) | RetfError::Io(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, RetfError>;
