//! Adaptive region-of-interest discovery and subchondral bone texture
//! classification for knee radiographs.

pub mod descriptors;
pub mod error;
pub mod imagecore;
pub mod learn;
pub mod pipeline;
pub mod preprocess;
pub mod segmentation;

pub use error::{Error, Result};
