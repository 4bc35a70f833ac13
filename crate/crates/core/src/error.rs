use std::fmt;

use thiserror::Error;

use crate::net::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, found {found}")]
    Dimension {
        op: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("network has off-diagonal skip weights; closed-form collapse needs a feed-forward net")]
    NotFeedForward,

    #[error("layer {layer} has a ReLU activation; only linear networks collapse to an affine map")]
    CannotCollapseNonlinear { layer: usize },

    #[error("invalid network: {}", DisplayViolations(.0))]
    Validation(Vec<Violation>),

    #[error("backward pass needs a forward trace: {0}")]
    Trace(String),

    #[error("label {label} out of range for {classes} classes")]
    Label { label: usize, classes: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated input: needed {needed} bytes, found {found}")]
    Truncation { needed: usize, found: usize },

    #[error("unsupported model file: {0}")]
    Version(String),

    #[error("cannot excise skips: t({from}->{to}) = {weight}")]
    CannotExcise { from: usize, to: usize, weight: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, expected: usize, found: usize) -> Self {
        Error::Dimension {
            op,
            expected,
            found,
        }
    }
}

struct DisplayViolations<'a>(&'a [Violation]);

impl fmt::Display for DisplayViolations<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (n, v) in self.0.iter().enumerate() {
            if n > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}
