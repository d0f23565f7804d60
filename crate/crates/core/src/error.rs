use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("fields live on different grids")]
    GridMismatch,
    #[error("region not contained in the grid: {0}")]
    RegionOutside(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("incompatible boundary data: {0}")]
    Incompatible(String),
    #[error("mode system overflow: |n| log(R/r) = {0:.1} exceeds 700")]
    Overflow(f64),
    #[error("normalization violated: {0}")]
    Normalization(String),
    #[error("target field is not closed: compatibility defect {0:.3e}")]
    NotClosed(f64),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Invalid(msg.into()))
}
