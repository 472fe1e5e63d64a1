//! Seeded multi-octave value noise.
//!
//! Lattice values come from hashing `(seed, octave, ix, iy)`, so a field is a
//! pure function of its seed and never consumes generator state.

use crate::image::ImageBuffer;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// Lattice spacing of the coarsest octave, in pixels.
    pub cell: f64,
    pub octaves: u32,
    /// Amplitude ratio between successive octaves.
    pub persistence: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self { cell: 32.0, octaves: 4, persistence: 0.5 }
    }
}

#[inline]
fn lattice(seed: u64, octave: u32, ix: i64, iy: i64) -> f64 {
    let h = seed::derive(seed, &[u64::from(octave), ix as u64, iy as u64]);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

#[inline]
fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Samples the field at a continuous position; result lies in `[0, 1]`.
pub fn sample(seed: u64, spec: &NoiseSpec, x: f64, y: f64) -> f64 {
    let mut sum = 0.0;
    let mut norm = 0.0;
    let mut amp = 1.0;
    let mut cell = spec.cell;
    for o in 0..spec.octaves {
        let fx = x / cell;
        let fy = y / cell;
        let (x0, y0) = (fx.floor(), fy.floor());
        let (tx, ty) = (smooth(fx - x0), smooth(fy - y0));
        let (ix, iy) = (x0 as i64, y0 as i64);
        let v00 = lattice(seed, o, ix, iy);
        let v10 = lattice(seed, o, ix + 1, iy);
        let v01 = lattice(seed, o, ix, iy + 1);
        let v11 = lattice(seed, o, ix + 1, iy + 1);
        let top = v00 + (v10 - v00) * tx;
        let bottom = v01 + (v11 - v01) * tx;
        sum += amp * (top + (bottom - top) * ty);
        norm += amp;
        amp *= spec.persistence;
        cell = (cell * 0.5).max(1.0);
    }
    sum / norm
}

/// Single-channel `height x width` field with values in `[0, 1]`.
pub fn field(seed: u64, height: usize, width: usize, spec: &NoiseSpec) -> ImageBuffer {
    ImageBuffer::from_fn(height, width, 1, |r, c, _| sample(seed, spec, c as f64, r as f64))
}
