use thiserror::Error;

use crate::geometry::CellIndex;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DrmError {
    #[error("invalid frame: {0}")]
    InvalidFrame(String),

    #[error("point (year={year}, age={age}) lies outside the observational frame")]
    OutOfFrame { year: f64, age: f64 },

    #[error("cohort path of cell {cell} leaves the analysis domain at u-cell {missing}")]
    PathOutsideDomain { cell: CellIndex, missing: CellIndex },

    #[error("cell {0} is not part of the analysis domain")]
    CellNotInDomain(CellIndex),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("no analyzable cells")]
    NoAnalyzableCells,

    #[error("domain selection removed every cohort")]
    EmptyDomain,

    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error(
        "normal matrix is singular (pivot {pivot} of {dim}); the system needs at least 4 data \
         points with no 3 on a common straight line and positive smoothing weights"
    )]
    Singular { pivot: usize, dim: usize },

    #[error("nonpositive residual degrees of freedom ({0})")]
    NoDegreesOfFreedom(i64),

    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

pub type Result<T> = std::result::Result<T, DrmError>;
