//! Crate-wide error type.
//!
//! Errors are grouped so a caller (notably the CLI) can map them onto exit
//! codes: input/validation problems ([`Error::exit_code`] = 1) versus I/O and
//! file-format problems (= 2).

use std::path::Path;

/// All failures produced by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Malformed text input (CSV, G-code, config). Lines are 1-based.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A G-code program violated the printer protocol (e.g. motion before homing).
    #[error("protocol error: {0}")]
    Protocol(String),

    /// A commanded position falls outside the machine travel limits.
    #[error("range error: {0}")]
    Range(String),

    /// A binary file is structurally invalid: bad magic, unsupported version,
    /// truncation, or checksum mismatch.
    #[error("format error: {0}")]
    Format(String),

    /// An OS-level I/O failure, annotated with what was being accessed.
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    /// A serial peer did not acknowledge within the configured window.
    #[error("transport timeout after {seconds} s")]
    Timeout { seconds: f64 },

    /// A numeric computation produced non-finite values.
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl Error {
    /// Process exit code this error maps to: 1 for validation problems,
    /// 2 for I/O and file-format problems.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidArgument(_)
            | Error::Parse { .. }
            | Error::Protocol(_)
            | Error::Range(_)
            | Error::Numeric(_) => 1,
            Error::Format(_) | Error::Io { .. } | Error::Timeout { .. } => 2,
        }
    }

    /// Wrap an [`std::io::Error`] with the path it occurred on.
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            context: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_partition_validation_from_io() {
        assert_eq!(Error::InvalidArgument("x".into()).exit_code(), 1);
        assert_eq!(
            Error::Parse {
                line: 3,
                message: "bad".into()
            }
            .exit_code(),
            1
        );
        assert_eq!(Error::Protocol("m".into()).exit_code(), 1);
        assert_eq!(Error::Format("crc".into()).exit_code(), 2);
        assert_eq!(Error::Timeout { seconds: 30.0 }.exit_code(), 2);
    }

    #[test]
    fn parse_error_displays_line_number() {
        let e = Error::Parse {
            line: 2,
            message: "expected a number, got \"abc\"".into(),
        };
        let text = e.to_string();
        assert!(text.contains("line 2"), "{text}");
    }
}
