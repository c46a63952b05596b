//! Phrase-conditioned affordance segmentation.
//!
//! Given an image and a small set of short phrases describing an action
//! purpose ("roll over", "hold liquid", ...), the network segments every
//! object that affords that action. Visual features from three backbone
//! stages are fused with a pooled phrase embedding, refined by alternating
//! vision→language attention and language→vision gating across levels, and
//! decoded by an atrous pyramid head.
//!
//! Everything runs on the small reverse-mode autodiff engine in [`tensor`].

pub mod cim;
pub mod data;
pub mod encoders;
pub mod error;
pub mod fusion;
pub mod gradsuite;
pub mod metrics;
pub mod model;
pub mod params;
pub mod seghead;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
