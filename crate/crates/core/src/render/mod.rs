//! Tile-based splatting of a [`GaussianCloud`](crate::types::GaussianCloud),
//! its analytic backward pass, and a ray-marching reference renderer.

mod backward;
mod oracle;
mod project;
mod raster;

pub use backward::{rasterize_backward, GaussianGrad, GradientBundle};
pub use oracle::{render_oracle, DEFAULT_ORACLE_STEPS};
pub use project::{project_gaussian, Projection, ProjectedGaussian};
pub use raster::{rasterize, rasterize_f64, rasterize_with};

use crate::error::{Error, Result};

/// Per-pixel alpha never exceeds this.
pub const ALPHA_MAX: f64 = 0.999;
/// Compositing stops once transmittance drops below this.
pub const TRANSMITTANCE_MIN: f64 = 1e-4;
/// Added to the diagonal of every projected covariance, in px^2.
pub const COV2D_DILATION: f64 = 0.3;
pub const TILE_SIZE: usize = 16;
/// Footprint radius, in standard deviations, used for tile binning.
pub const FOOTPRINT_SIGMAS: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RenderOptions {
    pub precision: Precision,
}

/// RGB image, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn black(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width * 3],
        }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {height}x{width} RGB image",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite pixel value"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn from_f64(height: usize, width: usize, data: &[f64]) -> Result<Self> {
        Self::from_data(height, width, data.iter().map(|&v| v as f32).collect())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f32; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn same_dims(&self, other: &Image) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// Per-pixel side outputs of the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderAux {
    pub final_transmittance: Vec<f64>,
    pub contrib_count: Vec<u32>,
}

pub(crate) fn check_frame(
    cloud: &crate::types::GaussianCloud,
    cam: &crate::types::Camera,
) -> Result<()> {
    if cloud.frame_id != cam.frame_id {
        return Err(Error::FrameMismatch {
            expected: cam.frame_id.to_string(),
            found: cloud.frame_id.to_string(),
        });
    }
    Ok(())
}
