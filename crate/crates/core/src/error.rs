use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input text: treebank, grammar file, threshold line, pipeline.
    #[error("{source_name}:{line}: {msg}")]
    Format {
        source_name: String,
        line: usize,
        msg: String,
    },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("unknown terminal `{0}`")]
    UnknownTerminal(String),
    #[error("no parse: sentence has zero probability under the grammar")]
    Ungrammatical,
    #[error("chart has no complete parse")]
    ParseFailure,
    #[error("{0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn format(source_name: &str, line: usize, msg: impl Into<String>) -> Self {
        Error::Format {
            source_name: source_name.to_string(),
            line,
            msg: msg.into(),
        }
    }

    /// Process exit status for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Format { .. } | Error::Invalid(_) => 3,
            Error::UnknownTerminal(_)
            | Error::Ungrammatical
            | Error::ParseFailure
            | Error::Model(_) => 4,
            Error::Io(_) => 5,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
