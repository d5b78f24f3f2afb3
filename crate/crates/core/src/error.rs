use thiserror::Error;

use crate::maze::MazeParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix did not have the size the operation requires.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Non-finite values appeared during optimization.
    #[error("training diverged: non-finite {what} (layer {layer})")]
    Divergence { what: &'static str, layer: usize },

    /// Divergence annotated with the position in the training schedule.
    #[error("training diverged at iteration {iteration}, episode {episode}: {source}")]
    DivergedAt {
        iteration: usize,
        episode: u64,
        #[source]
        source: Box<Error>,
    },

    /// An operation was invoked in a state where it is not allowed.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A state failed the environment's validity predicate.
    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    MazeParse(#[from] MazeParseError),

    #[error("scenario file line {line}: {message}")]
    ScenarioParse { line: usize, message: String },

    #[error("evaluation grid CSV line {line}: {message}")]
    GridParse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            got,
        }
    }

    /// True for divergence errors, with or without schedule annotation.
    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence { .. } | Error::DivergedAt { .. })
    }
}

pub(crate) fn check_len(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::dim(context, expected, got))
    }
}
