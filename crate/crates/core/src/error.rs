use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("shape mismatch: {0}")]
pub struct ShapeError(pub String);

impl ShapeError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Parse { path: PathBuf, msg: String },
    #[error("{path}: no column named {column:?}")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: no usable records ({skipped} skipped as empty)")]
    EmptyDataset { path: PathBuf, skipped: usize },
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("cannot balance: class {label} has no samples")]
    DegenerateClassBalance { label: u8 },
    #[error("fold count {k} out of range for {n} samples (need 2 <= k <= n)")]
    FoldCount { k: usize, n: usize },
    #[error("unsupported dataset format: {0}")]
    Format(String),
}

#[derive(Debug, Error)]
pub enum TokenizerError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Malformed {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("duplicate token {0:?} in vocabulary")]
    DuplicateToken(String),
    #[error("vocabulary does not define special token {0:?}")]
    MissingSpecial(&'static str),
    #[error("invalid vocabulary: {0}")]
    Invalid(String),
    #[error("max_length must be at least 2, got {0}")]
    MaxLength(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("dropout probability must lie in [0, 1), got {0}")]
    DropoutProbability(f64),
    #[error("label {0} is not a binary class")]
    Label(u32),
    #[error("non-finite gradient in parameter {name:?} at optimizer step {step}")]
    NonFiniteGradient { name: String, step: u64 },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("token id {id} at position {position} is outside the vocabulary of {vocab_size}")]
    TokenOutOfRange {
        id: u32,
        position: usize,
        vocab_size: usize,
    },
    #[error("sequence of {len} tokens exceeds {max} positions")]
    SequenceTooLong { len: usize, max: usize },
    #[error("unknown pooling mode {0:?}")]
    UnknownPooling(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl From<ShapeError> for ModelError {
    fn from(e: ShapeError) -> Self {
        ModelError::Nn(NnError::Shape(e))
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("non-finite loss {loss} at epoch {epoch}, step {step}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        loss: f64,
        sample_ids: Vec<String>,
    },
    #[error("optimizer aborted at epoch {epoch}, step {step}: {source}")]
    Optimizer {
        epoch: usize,
        step: usize,
        #[source]
        source: NnError,
    },
    #[error("nothing to evaluate: empty data set")]
    EmptyData,
    #[error("predictions ({preds}) and labels ({labels}) differ in length")]
    LengthMismatch { preds: usize, labels: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("epoch callback failed: {0}")]
    Callback(#[source] Box<dyn std::error::Error + Send + Sync>),
}

impl TrainError {
    /// True when the failure is numerical rather than a usage problem.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            TrainError::NonFiniteLoss { .. } | TrainError::Optimizer { .. }
        )
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed manifest: {0}")]
    Manifest(String),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("tensor {name:?}: expected shape {expected:?}, found {found:?}")]
    TensorShape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor {name:?}: {msg}")]
    TensorIndex { name: String, msg: String },
    #[error("weight blob truncated: need {needed} bytes, have {actual}")]
    Truncated { needed: u64, actual: u64 },
    #[error("checkpoint is missing tensor {0:?}")]
    MissingTensor(String),
    #[error("checkpoint has unexpected tensor {0:?}")]
    UnexpectedTensor(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error("import failed: {0}")]
    Import(String),
}
