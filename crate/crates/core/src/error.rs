use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("non-invertible covariance")]
    NonInvertibleCovariance,
    #[error("dimension mismatch: {0}")]
    Dimension(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("degenerate mode update")]
    DegenerateModeUpdate,
    #[error("degenerate distribution: {0}")]
    Degenerate(&'static str),
    #[error("label collision")]
    LabelCollision,
    #[error("no common label sets")]
    NoCommonLabelSets,
}

pub type Result<T> = core::result::Result<T, Error>;
