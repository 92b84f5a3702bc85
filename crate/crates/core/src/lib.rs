//! Curriculum training that removes future context for sequence
//! anticipation.
//!
//! A reasoner reconstructs masked future frames from past ones while a
//! per-instance easiness schedule gradually hides the frames between the
//! observation and the action. Classification heads read the
//! reconstructed action frames.

pub mod curriculum;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod objectives;
pub mod order_pretrain;
pub mod reasoners;
pub mod rng;

pub use error::{DcrError, Result};
