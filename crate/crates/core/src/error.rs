use thiserror::Error;

/// Errors raised anywhere in the stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at layer `{layer}`: expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        layer: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("stale tape: network weights changed since the forward pass")]
    StaleTape,
    #[error("key mismatch: {0}")]
    KeyMismatch(String),
    #[error("invalid tensor: {0}")]
    InvalidTensor(String),
    #[error("invalid network: {0}")]
    InvalidNetwork(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("step called on a terminal world")]
    StepAfterTerminal,
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("buffer holds {size} transitions, sampling starts at {learn_start}")]
    NotReady { size: usize, learn_start: usize },
    #[error("malformed observation window: {0}")]
    MalformedWindow(String),
    #[error("trajectory length mismatch: ego has {ego} steps, pedestrian {pedestrian} has {got}")]
    LengthMismatch { ego: usize, pedestrian: usize, got: usize },
    #[error("{model} did not converge: {metric} = {value:.4} (threshold {threshold})")]
    NonConvergence {
        model: String,
        metric: String,
        value: f64,
        threshold: f64,
    },
    #[error("missing model checkpoint `{0}`")]
    MissingModel(String),
    #[error("config: {0}")]
    Config(String),
    #[error("trace: {0}")]
    Trace(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
