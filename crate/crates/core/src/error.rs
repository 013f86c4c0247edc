use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller supplied something the operation cannot accept.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    /// A computation produced a non-finite value.
    #[error("numeric failure: {context}")]
    Numeric { context: String },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("did not converge: {0}")]
    NonConvergence(String),

    /// Wraps any failure raised inside a training loop with the step it happened at.
    #[error("training failed at step {step}: {source}")]
    Training {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numeric(context: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        match self {
            e @ Error::Training { .. } => e,
            other => Error::Training {
                step,
                source: Box::new(other),
            },
        }
    }

    /// True for failures caused by arithmetic rather than by bad input or IO.
    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Numeric { .. } | Error::Singular(_) | Error::NonConvergence(_) => true,
            Error::Training { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}

pub(crate) fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

pub(crate) fn check_finite(context: &str, values: &[f64]) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::numeric(format!("{context}: non-finite value")))
    }
}
