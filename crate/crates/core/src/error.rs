use thiserror::Error;

/// Every failure the library can report.
///
/// Each variant maps to a stable machine-readable code (see [`Error::code`]),
/// which the HTTP facade and the CLI surface verbatim.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated input: {0}")]
    Truncation(String),

    #[error("checkpoints are not comparable: {0}")]
    Incomparable(String),

    #[error("layer `{0}` has no parameters")]
    NoParams(String),

    #[error("unknown layer `{0}`")]
    UnknownLayer(String),

    #[error("index out of range: {0}")]
    OutOfRange(String),

    #[error("image decode error: {0}")]
    Decode(String),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("image too small: {width}x{height}, need at least 16x16")]
    ImageTooSmall { width: usize, height: usize },

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape_error",
            Error::Validation(_) => "validation_error",
            Error::Format(_) => "format_error",
            Error::Truncation(_) => "truncation_error",
            Error::Incomparable(_) => "incomparable",
            Error::NoParams(_) => "no_params",
            Error::UnknownLayer(_) => "unknown_layer",
            Error::OutOfRange(_) => "out_of_range",
            Error::Decode(_) => "decode_error",
            Error::UnsupportedFormat(_) => "unsupported_format",
            Error::ImageTooSmall { .. } => "image_too_small",
            Error::Divergence { .. } => "divergence",
            Error::Io(_) => "io_error",
        }
    }

    /// True for errors caused by bad user input rather than the environment.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Divergence { .. })
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
