//! Thresholding tests for linear hypotheses in linear and generalized linear models.

pub mod calibration;
pub mod cli;
pub mod error;
pub mod family;
pub mod hypothesis;
pub mod inference;
pub mod oracle;
pub mod rng;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
