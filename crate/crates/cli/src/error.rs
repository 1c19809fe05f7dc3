use std::fmt;
use std::process::ExitCode;

#[derive(Debug)]
pub enum CliError {
    /// An upstream artifact is absent or was produced under another config.
    Missing(String),
    Config(String),
    Compute(String),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(match self {
            CliError::Missing(_) => 2,
            CliError::Config(_) => 3,
            CliError::Compute(_) => 1,
        })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Missing(m) | CliError::Compute(m) => f.write_str(m),
            CliError::Config(m) => write!(f, "config error: {m}"),
        }
    }
}

impl From<dyntmf::Error> for CliError {
    fn from(e: dyntmf::Error) -> Self {
        match e {
            dyntmf::Error::Config(m) => CliError::Config(m),
            other => CliError::Compute(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Compute(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
