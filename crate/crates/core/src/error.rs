use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid service region: {0}")]
    InvalidRegion(String),

    #[error("invalid layout: {0}")]
    InvalidLayout(String),

    #[error("layout overflow: {0}")]
    LayoutOverflow(String),

    #[error("singular geometry: distance {distance:e} m is below the guard {guard:e} m")]
    SingularGeometry { distance: f64, guard: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("dictionary has no usable atoms")]
    EmptyDictionary,

    #[error("sign enumeration over {got} subarrays exceeds the limit of {limit}")]
    TooManySubarrays { got: usize, limit: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("sweep failed: {0}")]
    SweepFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
