use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("divisibility error: {what} = {value} is not divisible by {divisor}")]
    Divisibility { what: String, value: usize, divisor: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("non-finite value produced by {op}{}", fmt_layer(.layer))]
    NonFinite { op: &'static str, layer: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn fmt_layer(layer: &str) -> String {
    if layer.is_empty() {
        String::new()
    } else {
        format!(" in layer `{layer}`")
    }
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Prefix the layer path of a non-finite error with `name`. Other errors pass through.
    pub fn in_layer(self, name: &str) -> Self {
        match self {
            Error::NonFinite { op, layer } => Error::NonFinite {
                op,
                layer: if layer.is_empty() {
                    name.to_string()
                } else {
                    format!("{name}.{layer}")
                },
            },
            other => other,
        }
    }

    pub fn is_non_finite(&self) -> bool {
        matches!(self, Error::NonFinite { .. })
    }
}

/// Failures while reading or writing a checkpoint file. Every variant maps to a distinct code.
#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {0:?}, expected \"CVIT\"")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("shape mismatch for tensor `{name}`: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("tensor `{0}` missing from checkpoint")]
    MissingTensor(String),
    #[error("unexpected tensor `{0}` in checkpoint")]
    UnknownTensor(String),
    #[error("invalid shared-tensor reference `{from}` -> `{to}`")]
    BadReference { from: String, to: String },
    #[error("unknown dtype tag {0}")]
    BadDtype(u8),
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
}

impl CheckpointError {
    pub fn code(&self) -> u8 {
        match self {
            CheckpointError::BadMagic(_) => 1,
            CheckpointError::UnsupportedVersion(_) => 2,
            CheckpointError::Truncated(_) => 3,
            CheckpointError::ShapeMismatch { .. } => 4,
            CheckpointError::MissingTensor(_) => 5,
            CheckpointError::UnknownTensor(_) => 6,
            CheckpointError::BadReference { .. } => 7,
            CheckpointError::BadDtype(_) => 8,
            CheckpointError::Malformed(_) => 9,
        }
    }
}
