//! Error type shared by every module of the crate.

use std::fmt;

/// Binary file sections that can fail to parse.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    Magic,
    Version,
    Header,
    Config,
    EncoderParams,
    DecoderParams,
    SomWeights,
    Pixels,
    Record,
}

impl fmt::Display for Section {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Section::Magic => "magic",
            Section::Version => "version",
            Section::Header => "header",
            Section::Config => "config",
            Section::EncoderParams => "encoder params",
            Section::DecoderParams => "decoder params",
            Section::SomWeights => "som weights",
            Section::Pixels => "pixels",
            Section::Record => "record",
        };
        f.write_str(name)
    }
}

/// Structured parse failure for the binary IMGF / STMP / DSOM formats.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ParseError {
    #[error("bad magic at offset {offset}: expected {expected:?}, found {found:?}")]
    BadMagic {
        offset: u64,
        expected: [u8; 4],
        found: Vec<u8>,
    },
    #[error("unsupported version {found} at offset {offset} (supported: {supported})")]
    UnsupportedVersion { offset: u64, found: u32, supported: u32 },
    #[error("truncated {section} at offset {offset}: expected {expected} bytes, {actual} available")]
    Truncated {
        section: Section,
        offset: u64,
        expected: u64,
        actual: u64,
    },
    #[error("invalid {section} at offset {offset}: {reason}")]
    Invalid {
        section: Section,
        offset: u64,
        reason: String,
    },
    #[error("{extra} trailing bytes after offset {offset}")]
    TrailingBytes { offset: u64, extra: u64 },
}

impl ParseError {
    /// Byte offset at which parsing stopped.
    pub fn offset(&self) -> u64 {
        match self {
            ParseError::BadMagic { offset, .. }
            | ParseError::UnsupportedVersion { offset, .. }
            | ParseError::Truncated { offset, .. }
            | ParseError::Invalid { offset, .. }
            | ParseError::TrailingBytes { offset, .. } => *offset,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("rejected input: {0}")]
    InvalidInput(String),
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: String,
        actual: String,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training diverged at {stage} {index}: loss = {loss}")]
    Diverged {
        stage: &'static str,
        index: usize,
        loss: f64,
    },
    #[error("fit failed: {reason} (residual {residual:.3e})")]
    Fit { reason: String, residual: f64 },
    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: impl fmt::Display,
        actual: impl fmt::Display,
    ) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }

    pub(crate) fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
