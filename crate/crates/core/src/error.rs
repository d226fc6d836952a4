use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the inference, analysis and evaluation pipeline.
///
/// Variants line up with the failure classes the command-line front end
/// distinguishes (configuration, weights, input data, evaluation inputs, I/O).
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error("missing weight tensors: {}", .0.join(", "))]
    MissingWeights(Vec<String>),

    #[error("weight file error: {0}")]
    WeightFormat(String),

    #[error("input data error at line {line}: {message}")]
    InputData { line: u64, message: String },

    #[error("evaluation input error: {0}")]
    Eval(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
