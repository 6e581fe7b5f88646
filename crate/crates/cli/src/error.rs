use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Spec(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    /// 2 spec/validation, 3 numeric, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Spec(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 4,
        }
    }
}

impl From<wassalign::Error> for CliError {
    fn from(e: wassalign::Error) -> Self {
        if e.is_numeric() {
            CliError::Numeric(e.to_string())
        } else if e.is_io() || matches!(e, wassalign::Error::Format { .. }) {
            CliError::Io(e.to_string())
        } else {
            CliError::Spec(e.to_string())
        }
    }
}

pub(crate) fn io_err(context: impl std::fmt::Display, e: std::io::Error) -> CliError {
    CliError::Io(format!("{context}: {e}"))
}
