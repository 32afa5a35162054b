use thiserror::Error;

/// Errors produced anywhere in the distillation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid point cloud: {0}")]
    InvalidCloud(String),

    #[error("invalid scene spec: {0}")]
    InvalidScene(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("input node {0} is not bound")]
    Unbound(usize),

    #[error("node {0} does not belong to this graph")]
    UnknownNode(usize),

    #[error("graph has not been evaluated up to node {0}")]
    NotEvaluated(usize),

    #[error("forward trace has already been released")]
    TraceConsumed,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: u32, classes: usize },

    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),

    #[error("diagram too large for the exact solver: {0} points (limit {1})")]
    SizeGuard(usize, usize),

    #[error("numerical divergence: {0}")]
    Divergence(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
