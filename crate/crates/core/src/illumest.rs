//! Illumination estimation for the Retinex model `y = z * x`.
//!
//! Starting from the channel-max of the low-light image, a fixed number of
//! residual stages `x_{t+1} = x_t + H(x_t)` pull the estimate toward a local
//! brightness envelope (a box blur of the initial map). The residual
//! `H(x) = kappa * max(0, envelope - x)` is non-negative, so the cascade never
//! decreases and stays below `max(x_0, envelope)`.

use crate::error::{Error, Result};
use crate::image::{box_blur, ImageBuffer};

pub const ILLUMINATION_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IlluminationParams {
    pub stages: usize,
    pub kappa: f64,
    pub blur_window: usize,
}

impl Default for IlluminationParams {
    fn default() -> Self {
        Self { stages: 3, kappa: 0.5, blur_window: 15 }
    }
}

/// Single-channel map with values in `[ILLUMINATION_FLOOR, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IlluminationMap(ImageBuffer);

impl IlluminationMap {
    /// Wraps a single-channel buffer, flooring and capping it to the valid range.
    pub fn from_buffer(buf: ImageBuffer) -> Result<Self> {
        if buf.channels() != 1 {
            return Err(Error::shape("illumination map must be single-channel"));
        }
        Ok(Self(buf.map(|v| v.clamp(ILLUMINATION_FLOOR, 1.0))))
    }

    pub fn as_image(&self) -> &ImageBuffer {
        &self.0
    }

    pub fn into_image(self) -> ImageBuffer {
        self.0
    }
}

pub fn init_illumination(y: &ImageBuffer) -> IlluminationMap {
    IlluminationMap(y.channel_max().map(|v| v.clamp(ILLUMINATION_FLOOR, 1.0)))
}

pub fn refine_step(x: &IlluminationMap, envelope: &IlluminationMap, kappa: f64) -> Result<IlluminationMap> {
    if !(kappa > 0.0 && kappa <= 1.0) {
        return Err(Error::param(format!("kappa must be in (0, 1], got {kappa}")));
    }
    x.0.check_same(&envelope.0, "illumination refinement")?;
    let next = x.0.zip_map(&envelope.0, |xv, ev| {
        // kappa = 1 must land on the envelope exactly.
        if kappa == 1.0 {
            xv.max(ev)
        } else {
            xv + kappa * (ev - xv).max(0.0)
        }
    })?;
    Ok(IlluminationMap(next))
}

pub fn estimate_illumination(y: &ImageBuffer, params: &IlluminationParams) -> Result<IlluminationMap> {
    if params.stages == 0 {
        return Err(Error::param("illumination cascade needs at least one stage"));
    }
    let x0 = init_illumination(y);
    let envelope = IlluminationMap(box_blur(&x0.0, params.blur_window)?);
    (0..params.stages).try_fold(x0, |x, _| refine_step(&x, &envelope, params.kappa))
}

/// `z = y / x` per channel, clamped to `[0, 1]`.
pub fn retinex_divide(y: &ImageBuffer, x: &IlluminationMap) -> Result<ImageBuffer> {
    y.zip_map(&x.0, |yv, xv| (yv / xv).clamp(0.0, 1.0))
}
