//! Singer-level contrastive learning, frozen-encoder singer identification
//! and cloned-voice robustness analysis over a procedural singer catalog.

pub mod audio;
pub mod contrastive;
pub mod embeddings;
pub mod encoder;
pub mod error;
pub mod experiments;
pub mod features;
pub mod manifest;
pub mod nn;
pub mod pipeline;
pub mod probe;
pub mod rng;
pub mod splits;
pub mod synth;

pub use error::{Error, Result};
