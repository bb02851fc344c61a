//! Distributed target tracking over a sensor network with consensus Kalman
//! filtering and online sensor self-localization.
//!
//! Each node runs an information-form Kalman filter in its own coordinate frame.
//! After every local correction the nodes run a few rounds of weighted-KL
//! consensus, translating neighbor beliefs by estimated frame offsets (drifts).
//! The same consensus loss drives a calibration loop that estimates those
//! drifts online.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cskf;
pub mod drift_cal;
pub mod error;
pub mod gaussian_info;
pub mod linalg;
pub mod models;
pub mod network;
pub mod simulator;

pub use error::{Error, Result};
