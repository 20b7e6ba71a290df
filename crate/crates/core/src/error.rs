use thiserror::Error;

/// Errors raised by kernels, estimators, tests and the toy model.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid alphabet: {0}")]
    InvalidAlphabet(String),

    #[error("unknown token {token:?} for alphabet")]
    UnknownToken { token: String },

    #[error("sequences are defined over different alphabets")]
    AlphabetMismatch,

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("invalid kernel input: {0}")]
    InvalidInput(String),

    #[error("kernel {kernel} cannot be evaluated on {item}")]
    IncompatibleItem { kernel: String, item: &'static str },

    #[error("invalid kernel spec {spec:?}: {reason}")]
    InvalidKernelSpec { spec: String, reason: String },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("heterogeneous inputs: {0}")]
    Heterogeneous(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
