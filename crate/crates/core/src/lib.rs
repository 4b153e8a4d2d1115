//! Cohort trend estimation from repeated cross-sectional surveys.

// `!(x > 0.0)` is used on purpose so that NaN takes the error branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clusters;
pub mod design;
pub mod domain;
pub mod envelope;
pub mod error;
pub mod fdist;
pub mod geometry;
pub mod iteration;
pub mod ingest;
pub mod oracle;
pub mod pipeline;
pub mod simulate;
pub mod solver;
pub mod sparse;
pub mod verify;

pub use error::{DrmError, Result};
