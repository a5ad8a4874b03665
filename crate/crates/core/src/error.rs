use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid body: {0}")]
    InvalidBody(String),
    #[error("contact-space compliance is not positive definite")]
    NonPositiveDefinite,
    #[error("incoming contact velocity is zero; not an impact")]
    ZeroIncomingVelocity,
    #[error("contact is not approaching (normal velocity {0} >= 0)")]
    NotApproaching(f64),
    #[error("no consistent friction branch for {0}")]
    NoConsistentBranch(&'static str),
    #[error("event location did not converge; step too coarse")]
    StepTooCoarse,
    #[error("contact Jacobian is degenerate")]
    DegenerateJacobian,
    #[error("empty batch")]
    EmptyBatch,
    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },
    #[error("timestamps not strictly increasing at row {row}")]
    Monotonicity { row: usize },
    #[error("series too short: {got} samples, need {need}")]
    TooShort { got: usize, need: usize },
    #[error("fit window too small: {got} samples, need {need}")]
    WindowTooSmall { got: usize, need: usize },
    #[error("initial configuration penetrates the ground (min height {0})")]
    StartsPenetrating(f64),
    #[error("too few samples: {got}, need {need}")]
    TooFew { got: usize, need: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
