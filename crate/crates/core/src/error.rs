use alloc::string::String;

/// Failures raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("invalid argument to {op}: {detail}")]
    InvalidArgument { op: &'static str, detail: String },
    #[error("target index {index} out of range for {classes} classes")]
    TargetOutOfRange { index: usize, classes: usize },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(alloc::vec::Vec<usize>),
    #[error("parameter `{0}` has no gradient")]
    MissingGrad(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("non-finite loss at step {0}")]
    Diverged(u64),
    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape { op, detail: detail.into() }
}

pub(crate) fn arg_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::InvalidArgument { op, detail: detail.into() }
}
