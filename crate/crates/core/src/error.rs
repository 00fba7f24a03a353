use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parent index not less than child: edge {parent} -> {child}")]
    ParentOrder { parent: usize, child: usize },

    #[error("node {child} lists parent {parent} more than once")]
    DuplicateParent { parent: usize, child: usize },

    #[error("graph must have between 1 and {max} nodes, got {got}")]
    NodeCount { got: usize, max: usize },

    #[error("column {node}: expected {expected} entries on the parent support, got {got}")]
    ColumnShape {
        node: usize,
        expected: usize,
        got: usize,
    },

    #[error("column {node} has norm {norm} > 1")]
    ColumnNorm { node: usize, norm: f64 },

    #[error("noise specification covers {got} nodes, graph has {expected}")]
    NoiseShape { expected: usize, got: usize },

    #[error("sample norm {norm} exceeds the instance bound {bound}")]
    SampleBound { norm: f64, bound: f64 },

    #[error("deviation schedule needs {rounds} rounds but the horizon is {horizon}")]
    BudgetInfeasible { rounds: usize, horizon: usize },

    #[error("budget violation at node {node}: {detail}")]
    BudgetViolation { node: usize, detail: String },

    #[error("invalid deviation schedule: {0}")]
    Schedule(String),

    #[error("path enumeration refused for {0} nodes (limit 12)")]
    EnumerationTooLarge(usize),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error in `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn config(key: &str, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.to_string(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line harness.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::BudgetViolation { .. } => 3,
            _ => 2,
        }
    }
}
