//! Animatable deformable radiance-field head avatars.
//!
//! The crate builds an avatar from a degraded image sequence and improves it
//! with an iterative dataset-update loop: render the current avatar at the
//! training conditions, run a restoration operator over the renders, and
//! retrain on the restored images. A synthetic scene generator provides
//! ground truth so the whole loop is measurable without external models.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod deform;
pub mod error;
pub mod field;
pub mod geometry;
pub mod hashenc;
pub mod img;
pub mod math;
pub mod metrics;
pub mod pipeline;
pub mod render;
pub mod restore;
pub mod seeds;
pub mod synthdata;
pub mod trainer;

pub use error::{Error, Result};
