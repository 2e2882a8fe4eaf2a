use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("malformed image header: {0}")]
    Header(String),
    #[error("unsupported maxval {0} (only 255 is supported)")]
    MaxVal(u32),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid cipher configuration: {0}")]
    Config(String),
    #[error("sidecar error: {0}")]
    Sidecar(String),
    #[error("invalid key: {0}")]
    Key(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("no JPEG codec available in this build")]
    CodecUnavailable,
    #[error("codec failure: {0}")]
    Codec(String),
}

impl Error {
    /// True for failures of the external JPEG codec.
    pub fn is_codec(&self) -> bool {
        matches!(self, Error::CodecUnavailable | Error::Codec(_))
    }
}
