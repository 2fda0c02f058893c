use std::path::PathBuf;

use crate::model::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{} invariant violation(s): {}", .0.len(), join_violations(.0))]
    InvariantViolation(Vec<Violation>),

    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("template error: {0}")]
    Template(String),

    #[error("template is missing a value for {{{0}}}")]
    MissingField(String),

    #[error("template has {expected} image slot(s) but the record has {found} image(s)")]
    TemplateArity { expected: usize, found: usize },

    #[error("template bank for task {0:?} is empty")]
    EmptyBank(String),

    #[error("no template bank for task {0:?}")]
    UnknownTask(String),

    #[error("placement error: {0}")]
    Placement(String),

    #[error("record {0:?} already carries image declarations")]
    DoubleDeclaration(String),

    #[error("crop {rect} for {entity:?} exceeds parent bounds {width}x{height}")]
    RectOutOfBounds {
        entity: String,
        rect: String,
        width: u32,
        height: u32,
    },

    #[error("mix plan has no datasets")]
    EmptyPlan,

    #[error("dataset at position {0} has a zero count")]
    ZeroCount(usize),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("dataset {0:?} yielded no valid records")]
    EmptyDataset(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

fn join_violations(violations: &[Violation]) -> String {
    violations
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}
