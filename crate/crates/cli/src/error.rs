use std::io;
use std::path::PathBuf;

use keyface::evaluation::EvaluationError;
use keyface::face::FaceError;
use keyface::fusion::FusionError;
use keyface::hmm::HmmError;
use keyface::keystroke::KeystrokeError;
use keyface::store::StoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("environment variable {0} holding the passphrase is unset or empty")]
    MissingPassphrase(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("invalid submission: {0}")]
    Invalid(String),
    #[error("minimum {required} {what}, got {actual}")]
    TooFewSamples {
        what: &'static str,
        required: usize,
        actual: usize,
    },
    #[error("unknown user {0:?}")]
    UnknownUser(String),
    #[error("user {0:?} has not completed enrollment")]
    NotTrained(String),
    #[error("user {0:?} is already trained; enable allow_append to add samples")]
    AlreadyTrained(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Keystroke(#[from] KeystrokeError),
    #[error(transparent)]
    Hmm(#[from] HmmError),
    #[error(transparent)]
    Face(#[from] FaceError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Evaluation(#[from] EvaluationError),
}

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }
}
