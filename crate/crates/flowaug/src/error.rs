use std::path::PathBuf;

use flowaug_core::augment::AugmentError;
use flowaug_core::classifier::ClassifierError;
use flowaug_core::eval::EvalError;
use flowaug_core::flows::FlowError;
use flowaug_core::seqgen::SeqError;

/// Broad failure classes, each with its own process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Io,
    Data,
    Numeric,
}

impl ErrorKind {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorKind::Config => 2,
            ErrorKind::Io => 3,
            ErrorKind::Data => 4,
            ErrorKind::Numeric => 5,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {reason}")]
    Parse {
        path: PathBuf,
        line: u64,
        reason: String,
    },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("config: {0}")]
    Config(String),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io { .. } => ErrorKind::Io,
            Error::Parse { .. } | Error::Format { .. } | Error::Flow(_) | Error::Eval(_) => {
                ErrorKind::Data
            }
            Error::Config(_) => ErrorKind::Config,
            Error::Stage { source, .. } => source.kind(),
            Error::Augment(e) => match e {
                AugmentError::Sequence(SeqError::Diverged(_)) | AugmentError::Density(_) => {
                    ErrorKind::Numeric
                }
                AugmentError::BadStrategy(_) | AugmentError::EmptyClassList => ErrorKind::Config,
                _ => ErrorKind::Data,
            },
            Error::Classifier(e) => match e {
                ClassifierError::NonFiniteLoss { .. } => ErrorKind::Numeric,
                ClassifierError::Network(flowaug_core::neural::NnError::NonFiniteGradient(_)) => {
                    ErrorKind::Numeric
                }
                ClassifierError::InvalidConfig(_) => ErrorKind::Config,
                _ => ErrorKind::Data,
            },
        }
    }
}

pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T, E: Into<Error>> StageExt<T> for std::result::Result<T, E> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| Error::Stage {
            stage,
            source: Box::new(e.into()),
        })
    }
}
