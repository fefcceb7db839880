//! Explicit data-driven predictive control.
//!
//! Learns a piecewise-affine predictive control law directly from recorded
//! input/state data, without identifying a plant model, and checks the
//! learned closed loop for stability before deployment.

pub mod data;
pub mod error;
pub mod explicit;
pub mod mpqp;
pub mod numkit;
pub mod optkit;
pub mod predictor;
pub mod sim;
pub mod stability;

pub use error::{Error, Result};
