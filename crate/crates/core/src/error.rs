use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("knot grid is not equidistant")]
    NonEquidistantGrid,

    #[error("singular linear system while building smoothing kernel of order {0}")]
    SingularSystem(usize),

    #[error("level {0} holds no samples")]
    EmptyLevel(usize),

    #[error("argument {0} outside the support of the model")]
    OutsideSupport(f64),

    #[error("non-finite statistic: {0}")]
    NonFinite(String),

    #[error("level cap exceeded: L would exceed {cap}")]
    LevelCapExceeded { cap: usize },

    #[error("iteration cap of {cap} reached in the {stage} loop")]
    IterationCap { stage: &'static str, cap: usize },

    #[error("theorem case not covered: {0}")]
    NotCovered(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
