//! Online hierarchical action localization and description over video
//! streams: frame scoring, boundary detection, context memory, description
//! requests, evaluation, and synthetic data.

pub mod cli;
pub mod describer;
pub mod detector;
pub mod error;
pub mod memory;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod scoring;
pub mod simulator;
pub mod stream;

pub use error::{Error, Result};
