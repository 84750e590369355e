use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch at node `{node}`: {detail}")]
    ShapeMismatch { node: String, detail: String },

    #[error("leaf `{0}` is not bound")]
    UnboundLeaf(String),

    #[error("no node named `{0}`")]
    UnknownNode(String),

    #[error("backward requires a completed forward pass (node `{0}` has no value)")]
    NotEvaluated(String),

    #[error("loss must be a scalar, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("invalid value for `{field}`: {reason}")]
    InvalidField { field: String, reason: String },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("non-finite result: {0}")]
    NonFinite(String),

    #[error("{0}")]
    Config(String),
}

impl Error {
    pub fn field(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidField {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Prefixes the field path of an [`Error::InvalidField`], leaving other
    /// variants untouched.
    pub fn within(self, parent: &str) -> Self {
        match self {
            Error::InvalidField { field, reason } => Error::InvalidField {
                field: alloc::format!("{parent}.{field}"),
                reason,
            },
            other => other,
        }
    }
}
