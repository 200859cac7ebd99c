//! Botnet detection over time-windowed netflow records.
//!
//! The pipeline runs [`ingest`] → [`window`] → [`features`] → a classifier
//! ([`forest`] or [`mlp`]) → [`eval`]. Models are saved and loaded through
//! [`persist`]. [`harness`] strings the stages together
//! for scenario groups and window-size sweeps, and [`synth`] produces labelled
//! traces for desk-scale experiments.

pub mod dataset;
pub mod error;
pub mod eval;
pub mod features;
pub mod forest;
pub mod harness;
pub mod ingest;
pub mod mlp;
pub mod persist;
pub mod synth;
pub mod window;

pub use dataset::Dataset;
pub use error::{Error, Result};
