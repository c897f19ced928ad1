use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Non-finite value encountered. `layer` is the transformer block index
    /// when the failure happened inside the trunk.
    #[error("numeric failure{}: {msg}", layer.map(|l| format!(" in layer {l}")).unwrap_or_default())]
    Numeric { layer: Option<usize>, msg: String },

    #[error("config error for `{key}`: {msg}")]
    Config { key: String, msg: String },

    #[error("bad file format, field `{field}`: {msg}")]
    Format { field: String, msg: String },

    #[error("simulation error: {0}")]
    Sim(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(layer: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Numeric {
            layer,
            msg: msg.into(),
        }
    }

    pub(crate) fn format(field: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            msg: msg.into(),
        }
    }
}
