use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutogradError {
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },
    #[error("{op}: unsupported spatial rank {rank} (expected 2 or 3)")]
    UnsupportedRank { op: &'static str, rank: usize },
    #[error("{op}: invalid argument: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
    #[error("{op}: produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("{op}: empty tensor")]
    Empty { op: &'static str },
    #[error("variable does not belong to this graph")]
    ForeignVar,
    #[error("backward root must be a scalar, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("backward already ran on this graph; record a new forward pass")]
    BackwardAlreadyRun,
}

pub type Result<T, E = AutogradError> = std::result::Result<T, E>;

pub(crate) fn mismatch(op: &'static str, detail: impl Into<String>) -> AutogradError {
    AutogradError::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn invalid(op: &'static str, detail: impl Into<String>) -> AutogradError {
    AutogradError::InvalidArgument {
        op,
        detail: detail.into(),
    }
}
