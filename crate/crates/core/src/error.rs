use std::fmt;
use std::io;
use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Error type shared by every module of the crate.
///
/// The variants map onto the process exit codes used by the command line
/// front-end: configuration problems exit with 2, file and format problems
/// with 3, and violated preconditions (shapes, labels, numerics) with 4.
#[derive(Debug)]
pub enum Error {
    /// Two operands disagree on shape.
    Dimension {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    /// A documented precondition was violated.
    Contract(String),
    /// A value that must be finite was not.
    Numeric(String),
    /// Malformed or incomplete experiment configuration.
    Config(String),
    /// An OS-level read or write failed.
    Io { path: PathBuf, source: io::Error },
    /// A file was readable but its content does not follow the format.
    Format {
        path: PathBuf,
        offset: u64,
        message: String,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            offset,
            message: msg.into(),
        }
    }

    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { .. } | Error::Format { .. } => 3,
            Error::Dimension { .. } | Error::Contract(_) | Error::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension { op, left, right } => write!(
                f,
                "dimension mismatch in {op}: {}x{} vs {}x{}",
                left.0, left.1, right.0, right.1
            ),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Numeric(msg) => write!(f, "numeric error: {msg}"),
            Error::Config(msg) => write!(f, "config error: {msg}"),
            Error::Io { path, source } => write!(f, "io error on {}: {source}", path.display()),
            Error::Format { path, offset, message } => {
                write!(f, "{} at byte offset {offset}: {message}", path.display())
            }
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io { source, .. } => Some(source),
            _ => None,
        }
    }
}
