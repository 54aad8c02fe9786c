use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the annotation library.
#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an argument was violated.
    #[error("invalid input: {0}")]
    Input(String),

    /// The antenna moved too far between two consecutive samples for phase
    /// unwrapping to stay unambiguous.
    #[error(
        "trajectory sample {sample}: antenna displacement {displacement:.6} m exceeds the unwrap bound {limit:.6} m"
    )]
    SpeedBound {
        sample: usize,
        displacement: f64,
        limit: f64,
    },

    /// A sequence could not be processed end to end (e.g. nothing registered).
    #[error("pipeline failure: {0}")]
    Pipeline(String),

    #[error(transparent)]
    Parse(#[from] ParseError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

/// Where in a file a parse error was detected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Byte(u64),
    Line(usize),
    File,
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Byte(b) => write!(f, "byte {b}"),
            Location::Line(l) => write!(f, "line {l}"),
            Location::File => f.write_str("file"),
        }
    }
}

/// Error classes for on-disk sequence parsing.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseErrorKind {
    /// Bad magic number, header token, dimensions or maxval.
    MalformedHeader,
    /// File ended before the declared payload.
    Truncated,
    /// Frame indices are not contiguous from zero, or counts disagree with the metadata.
    IndexGap,
    /// More than one tag record for the same (frame, epc).
    DuplicateRecord,
    /// A record that is well-formed JSON but violates a value constraint.
    InvalidRecord,
    /// Syntactically invalid JSON or a missing/unknown field.
    Json,
}

#[derive(Debug, Clone, Error)]
#[error("{file}: {location}: {kind:?}: {message}")]
pub struct ParseError {
    pub file: PathBuf,
    pub location: Location,
    pub kind: ParseErrorKind,
    pub message: String,
}

impl ParseError {
    pub(crate) fn new(
        file: impl Into<PathBuf>,
        location: Location,
        kind: ParseErrorKind,
        message: impl Into<String>,
    ) -> Self {
        ParseError {
            file: file.into(),
            location,
            kind,
            message: message.into(),
        }
    }
}
