use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A time or scalar argument fell outside the region where a formula is defined.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    /// A quadratic reward makes the tilted posterior improper.
    #[error("improper tilt: {0}")]
    Curvature(String),

    #[error("invalid mixture: {0}")]
    InvalidMixture(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("training diverged at iteration {iteration}: loss {loss} exceeds 10x initial {initial}")]
    Divergence { iteration: usize, loss: f64, initial: f64 },

    #[error("checkpoint format: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for errors caused by evaluating formulas outside their domain.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Domain(_) | Error::Curvature(_) | Error::Divergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension { expected, got })
    }
}
