//! Crowd-sourced multi-verb annotation toolkit: aggregate worker picks into
//! per-video annotation probabilities, train a predictor against those
//! probabilities (or against one-hot majority votes), and evaluate with
//! threshold-based set-retrieval accuracy.

pub mod annotations;
pub mod error;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod statistics;
pub mod synthetic;
pub mod tables;

pub use error::{Error, Result};
