//! Best-view camera forecasting for synchronized multi-camera recordings.
//!
//! Per-camera visual and semantic features are fused per timestep, a
//! temporal block network forecasts the best camera for the next `H`
//! keyframes from the last `L`, and protocol runners evaluate it against
//! per-frame and area-based baselines.

// Negated float comparisons are used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod features;
pub mod labels;
pub mod model;
pub mod train;

pub use error::{Error, Result};
