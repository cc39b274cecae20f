use teso_core::format::FormatError;
use thiserror::Error;

/// Failure of a subcommand, split by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, arguments or input files (exit code 2).
    #[error("invalid input: {0}")]
    Invalid(String),
    /// Anything else that went wrong while running (exit code 1).
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    /// Wraps a decoding error for the named input file.
    pub fn input(path: &std::path::Path, e: FormatError) -> Self {
        match e {
            FormatError::Io(io) if io.kind() == std::io::ErrorKind::InvalidData => {
                CliError::Invalid(format!("{}: {io}", path.display()))
            }
            FormatError::Io(io) => CliError::Runtime(format!("reading {}: {io}", path.display())),
            other => CliError::Invalid(format!("{}: {other}", path.display())),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}
