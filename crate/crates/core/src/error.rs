use thiserror::Error;

use vitalcast_numeric::TensorError;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("catalog: {0}")]
    Catalog(String),

    #[error("unknown feature '{0}'")]
    UnknownFeature(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: u64,
        message: String,
    },

    #[error("schedule: {0}")]
    Schedule(String),

    #[error("diffusion step {t} outside 1..={t_max}")]
    StepOutOfRange { t: usize, t_max: usize },

    #[error("no valid target slots: {0}")]
    NoValidSlots(String),

    #[error("model config: {0}")]
    Config(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("i/o on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl CoreError {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }
}
