//! Continuous authentication from keystroke dynamics and IMU streams.
//!
//! The pipeline: [`features`] turns raw session logs into fixed-shape
//! sequences, [`model`] embeds them with dual-attention transformer towers,
//! [`training`] fits the towers with a triplet objective, and [`evaluation`]
//! scores enrollment/verification and continuous-authentication metrics.
//! [`datasets`] handles ingestion, splits, synthetic corpora and checkpoints.

// `!(x > 0.0)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod datasets;
pub mod evaluation;
pub mod features;
pub mod model;
pub mod numerics;
pub mod parallel;
pub mod pipeline;
pub mod training;

mod error;

pub use error::{Error, Result};
