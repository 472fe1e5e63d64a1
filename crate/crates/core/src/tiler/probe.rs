//! Analytic denoisers for checking the tiling scheme.

use crate::diffcore::{Denoiser, NoiseSchedule, OracleDenoiser, Region};
use crate::error::Result;
use crate::illumest::IlluminationMap;
use crate::image::ImageBuffer;

/// Prediction depends only on the values at each pixel and on `t`, so tiled
/// averaging must reproduce whole-image prediction.
#[derive(Debug, Clone, Copy, Default)]
pub struct PointwiseDenoiser;

impl Denoiser for PointwiseDenoiser {
    fn predict(&self, x_t: &ImageBuffer, cond: &ImageBuffer, illum: &IlluminationMap, t: usize) -> Result<ImageBuffer> {
        let phase = (t as f64 / 97.0).sin();
        let lit = illum.as_image();
        let (h, w, ch) = x_t.dims();
        Ok(ImageBuffer::from_fn(h, w, ch, |r, c, k| {
            0.35 * x_t.get(r, c, k) + 0.2 * (cond.get(r, c, k) - 0.5) + 0.1 * phase * lit.get(r, c, 0)
        }))
    }
}

/// The exact oracle noise plus a bias that ramps across each tile's own
/// coordinates. Every tile disagrees with its neighbours near shared edges,
/// so restoration quality depends on how much the tiles overlap.
#[derive(Debug, Clone)]
pub struct TileBiasProbe {
    oracle: OracleDenoiser,
    amplitude: f64,
}

impl TileBiasProbe {
    pub fn new(target: ImageBuffer, schedule: NoiseSchedule, amplitude: f64) -> Self {
        Self { oracle: OracleDenoiser::new(target, schedule), amplitude }
    }
}

impl Denoiser for TileBiasProbe {
    fn predict(&self, x_t: &ImageBuffer, cond: &ImageBuffer, illum: &IlluminationMap, t: usize) -> Result<ImageBuffer> {
        self.predict_region(x_t, cond, illum, t, Region::full(x_t))
    }

    fn predict_region(
        &self,
        x_t: &ImageBuffer,
        cond: &ImageBuffer,
        illum: &IlluminationMap,
        t: usize,
        region: Region,
    ) -> Result<ImageBuffer> {
        let exact = self.oracle.predict_region(x_t, cond, illum, t, region)?;
        let (h, w, ch) = exact.dims();
        let (sh, sw) = ((h.max(2) - 1) as f64, (w.max(2) - 1) as f64);
        Ok(ImageBuffer::from_fn(h, w, ch, |r, c, k| {
            let ramp = (r as f64 / sh - 0.5) + (c as f64 / sw - 0.5);
            exact.get(r, c, k) + self.amplitude * ramp
        }))
    }
}

/// The 128x128 smooth colour target used with [`TileBiasProbe`].
pub fn probe_target(size: usize) -> ImageBuffer {
    let n = (size.max(2) - 1) as f64;
    ImageBuffer::from_fn(size, size, 3, |r, c, k| {
        let (y, x) = (r as f64 / n, c as f64 / n);
        match k {
            0 => 0.2 + 0.6 * x,
            1 => 0.25 + 0.5 * y,
            _ => 0.3 + 0.4 * (x * y),
        }
    })
}
