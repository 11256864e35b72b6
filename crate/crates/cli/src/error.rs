use std::fmt;

/// Failure classes of the command line, each with its exit code.
#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration or arguments (exit 2).
    Config(String),
    /// File system failure (exit 3).
    Io(String),
    /// Malformed or inconsistent input data (exit 4).
    Data(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Data(_) => 4,
        }
    }

    /// Classify a library error raised while handling `context` (a file name
    /// or stage).
    pub fn from_core(e: qmpe_core::Error, context: &str) -> Self {
        use qmpe_core::Error as E;
        match e {
            E::Io(io) => CliError::Io(format!("{context}: {io}")),
            E::Config(msg) => CliError::Config(format!("{context}: {msg}")),
            E::Parse { line, msg } => CliError::Data(format!("{context}: line {line}: {msg}")),
            other => CliError::Data(format!("{context}: {other}")),
        }
    }

    pub fn io(context: impl fmt::Display, e: impl fmt::Display) -> Self {
        CliError::Io(format!("{context}: {e}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}
