//! Per-pixel 3D Gaussian reconstruction: splatter images, a differentiable
//! tile rasterizer, multi-view fusion, fitting and evaluation utilities.

pub mod error;
pub mod fusion;
pub mod harness;
pub mod render;
pub mod sh;
pub mod splatter;
pub mod train;
pub mod types;

pub use error::{Error, Result};
