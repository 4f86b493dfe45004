//! Athlete tracking, pose-based event detection and evaluation.

pub mod config;
pub mod encoding;
pub mod error;
pub mod io;
pub mod metrics;
pub mod model;
pub mod report;
pub mod swim;
pub mod synth;
pub mod tracker;
pub mod types;

pub use error::{Error, Result};
pub use types::*;
