use hiercrop::data::DataError;
use hiercrop::eval::EvalError;
use hiercrop::gradcheck::GradCheckError;
use hiercrop::network::NetworkError;
use hiercrop::TrainError;

/// Failure classes with their process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    /// The message without its class prefix.
    pub fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Data(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Generator(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::Config(_) => CliError::Config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Invalid(_) => CliError::Config(e.to_string()),
            TrainError::NonFiniteGradient { .. } => CliError::Numeric(e.to_string()),
            TrainError::Network(inner) => inner.into(),
            TrainError::Data(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Confidence(_) => CliError::Config(e.to_string()),
            EvalError::Network(inner) => inner.into(),
            EvalError::Train(inner) => inner.into(),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<GradCheckError> for CliError {
    fn from(e: GradCheckError) -> Self {
        CliError::Numeric(e.to_string())
    }
}
