use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("schema mismatch in {path}: {reason}")]
    SchemaMismatch { path: PathBuf, reason: String },

    #[error("invalid field map: {0}")]
    FieldMap(String),

    #[error("lexicon line {line}: {reason}")]
    Lexicon { line: usize, reason: String },

    #[error("no users")]
    NoUsers,

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(&'static str),

    #[error("subset `{subset}` too small: {size} users (need at least 2 with varying features)")]
    SubsetTooSmall { subset: String, size: usize },

    #[error("dimension mismatch: expected {expected} inputs, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid training config: {0}")]
    InvalidConfig(String),

    #[error("degenerate target: {0}")]
    DegenerateTarget(String),

    #[error("model feature names {model:?} do not match data features {data:?}")]
    FeatureMismatch {
        model: Vec<String>,
        data: Vec<String>,
    },

    #[error("model format error: {0}")]
    Model(String),

    #[error("{0}")]
    Eval(String),

    #[error("invalid synthetic config: {0}")]
    Synth(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
