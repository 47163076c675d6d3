pub mod error;
pub mod explainer;
pub mod generator;
pub mod graph;
pub mod metrics;
pub mod models;
pub mod sequencer;
pub mod synth;

pub use error::{Error, Result};
