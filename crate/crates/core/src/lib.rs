//! Modeling, identification and robust adaptive control of soft continuum
//! arms under the piecewise-constant-curvature assumption.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod control;
pub mod dynamics;
pub mod error;
pub mod identification;
pub mod kinematics;
pub mod presets;
pub mod simulator;

pub use error::{Error, Result};
