use saekit::autonaming::NamingError;
use saekit::embedding_io::EmbeddingIoError;
use saekit::metrics::MetricsError;
use saekit::sae::SaeError;
use saekit::synthgen::SynthError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("model endpoint: {0}")]
    Endpoint(String),
    #[error("{0}")]
    Other(String),
    #[error("I/O failure: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
            CliError::Endpoint(_) => 4,
            CliError::Other(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<EmbeddingIoError> for CliError {
    fn from(e: EmbeddingIoError) -> Self {
        match e {
            EmbeddingIoError::Io(io) => CliError::Io(io),
            EmbeddingIoError::DegenerateData(_) | EmbeddingIoError::NonFiniteEntry { .. } => {
                CliError::Numerical(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SaeError> for CliError {
    fn from(e: SaeError) -> Self {
        match e {
            SaeError::NonFiniteLoss { .. } | SaeError::DegenerateData(_) => {
                CliError::Numerical(e.to_string())
            }
            SaeError::Format(inner) => inner.into(),
            SaeError::Io(io) => CliError::Io(io),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::Sae(inner) => inner.into(),
            MetricsError::NoDefinedNeurons => CliError::Numerical(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<NamingError> for CliError {
    fn from(e: NamingError) -> Self {
        match e {
            NamingError::EndpointUnreachable { .. }
            | NamingError::MalformedResponse(_)
            | NamingError::TooManyUnparseable { .. } => CliError::Endpoint(e.to_string()),
            NamingError::Transcript(io) => CliError::Io(io),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Config(format!("JSON: {e}"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        let nonfinite: CliError = SaeError::NonFiniteLoss { epoch: 1, batch: 0 }.into();
        assert_eq!(nonfinite.exit_code(), 3);
        let down: CliError = NamingError::EndpointUnreachable {
            attempts: 4,
            last: "refused".into(),
        }
        .into();
        assert_eq!(down.exit_code(), 4);
        let shape: CliError = SynthError::InvalidShape("t < k".into()).into();
        assert_eq!(shape.exit_code(), 2);
    }
}
