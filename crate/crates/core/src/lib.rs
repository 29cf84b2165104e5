//! Multi-source meta-learning for text classification under domain shift.
//!
//! The crate bundles a small reverse-mode autodiff engine, a text pipeline
//! with a synthetic multi-domain corpus generator, a mean-pooling encoder with
//! a momentum key encoder, per-domain class-prototype memories, per-class
//! feature queues for the augmentation-consistency ("jury") loss, and the
//! episodic meta-train / meta-test training loop that ties them together.

pub mod autodiff;
pub mod checkpoint;
pub mod engine;
mod error;
pub mod harness;
pub mod jury;
pub mod memory;
pub mod model;
pub mod par;
pub mod text;

pub use error::{Error, Result};
