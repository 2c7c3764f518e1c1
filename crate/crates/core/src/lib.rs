//! Dialogue state tracking with hierarchical slot-status prediction.
//!
//! The crate covers the whole pipeline: a slot [`schema`], dialogue
//! [`corpus`] handling with a synthetic generator, training-time
//! [`perturbation`] by utterance insertion, a small transformer
//! [`encoder`], the prediction heads in [`dst_model`], the joint DST + MLM
//! [`training`] loop and length-bucketed [`evaluation`].

pub mod corpus;
pub mod dst_model;
pub mod encoder;
pub mod error;
pub mod evaluation;
pub mod exec;
pub mod fixtures;
pub mod perturbation;
pub mod rng;
pub mod schema;
pub mod training;

pub use error::{DstError, Result};
pub use exec::Execution;
