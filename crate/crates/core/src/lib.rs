//! Reduced-dimensional adaptive dynamic programming for two-time-scale LTI
//! plants and clustered consensus networks.
//!
//! The learner never sees a model: it consumes trajectories of the slow
//! variables and recovers the LQR gain of the reduced system by data-driven
//! policy iteration. The [`oracle`] module holds the model-based counterparts
//! used for verification.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cluster;
pub mod error;
pub mod harness;
pub mod learner;
pub mod linalg;
pub mod observer;
pub mod oracle;
pub mod par;
pub mod sim;
pub mod sp_model;

pub use error::{Error, Result};
