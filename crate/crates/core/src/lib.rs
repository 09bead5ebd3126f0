//! pacesort: self-supervised video representation learning from playback speed.
//!
//! Trains small 3D CNNs to sort shuffled clips of a video by playback speed
//! (fast-forward and rewind), then reuses the learned features for action
//! classification and nearest-neighbour retrieval. Everything runs on the CPU
//! and is deterministic for a fixed seed.

pub mod backbone;
pub mod cli;
pub mod config;
pub mod data;
pub mod error;
pub mod head;
pub mod nn;
pub mod norm;
pub mod report;
pub mod retrieval;
pub mod sampler;
pub mod train;

pub use error::{Error, Result};
