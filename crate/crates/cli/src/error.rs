use treeattn::Error;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
    #[error("gradient check failed: {0}")]
    GradcheckFailed(String),
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::GradcheckFailed(_) | CliError::Internal(_) => 1,
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Config(_) | Error::Checkpoint(_) => CliError::Config(msg),
            Error::NonFinite { .. } => CliError::Numeric(msg),
            Error::Tree(_)
            | Error::Syntax { .. }
            | Error::Conll { .. }
            | Error::MissingParse { .. }
            | Error::Data(_)
            | Error::Io { .. }
            | Error::Json(_) => CliError::Data(msg),
            Error::Shape { .. } | Error::Empty { .. } | Error::NonScalarLoss(_) => CliError::Internal(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Internal(e.to_string())
    }
}
