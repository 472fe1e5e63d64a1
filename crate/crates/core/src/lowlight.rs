//! Low-light simulation with the iterated quadratic curve
//!
//! ```text
//! EC_0 = x
//! EC_n = EC_{n-1} + M_n * EC_{n-1} * (1 - EC_{n-1})
//! ```
//!
//! run in the darkening direction (`M_n` in `[-1, 0]`). For such `alpha` the
//! map `x -> x + alpha x (1 - x)` keeps `[0, 1]`, is monotone in `x`, and
//! never brightens, so no clamping is needed anywhere in this module.
//!
//! The adjustment maps are calibrated so that a mid-gray pixel lands on the
//! exposure target `e` after `n` iterations; optional smooth noise makes them
//! spatially variant.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::noise::{self, NoiseSpec};
use crate::seed;

pub const DEFAULT_ITERATIONS: usize = 10;
pub const EXPOSURE_RANGE: (f64, f64) = (0.05, 0.3);
/// The gray level at which exposure targets are calibrated.
pub const CALIBRATION_ANCHOR: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExposureConfig {
    pub e: f64,
    pub iterations: usize,
    pub variation_amplitude: f64,
    pub seed: u64,
}

impl ExposureConfig {
    pub fn new(e: f64, variation_amplitude: f64, seed: u64) -> Result<Self> {
        let cfg = Self { e, iterations: DEFAULT_ITERATIONS, variation_amplitude, seed };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.e > 0.0 && self.e <= CALIBRATION_ANCHOR) {
            return Err(Error::param(format!("exposure target must be in (0, 0.5], got {}", self.e)));
        }
        if self.iterations == 0 {
            return Err(Error::param("curve iterations must be >= 1"));
        }
        if !(0.0..=0.2).contains(&self.variation_amplitude) {
            return Err(Error::param(format!(
                "variation amplitude must be in [0, 0.2], got {}",
                self.variation_amplitude
            )));
        }
        Ok(())
    }
}

/// The per-iteration maps `M_1..M_n`, each single-channel with values in `[-1, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjustmentMapStack {
    maps: Vec<ImageBuffer>,
}

impl AdjustmentMapStack {
    pub fn new(maps: Vec<ImageBuffer>) -> Result<Self> {
        let first = maps.first().ok_or_else(|| Error::param("empty adjustment stack"))?;
        for m in &maps {
            if m.channels() != 1 || m.height() != first.height() || m.width() != first.width() {
                return Err(Error::shape("adjustment maps must be single-channel and equally sized"));
            }
            check_alpha(m)?;
        }
        Ok(Self { maps })
    }

    pub fn constant(alpha: f64, iterations: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(vec![ImageBuffer::filled(height, width, 1, alpha); iterations])
    }

    pub fn maps(&self) -> &[ImageBuffer] {
        &self.maps
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

fn check_alpha(alpha: &ImageBuffer) -> Result<()> {
    if alpha.min_value() < -1.0 || alpha.max_value() > 0.0 {
        return Err(Error::param("adjustment values must lie in [-1, 0]"));
    }
    Ok(())
}

/// `x + alpha x (1 - x)`, evaluated as `(1 + alpha) x - alpha x^2` so that
/// `alpha = -1` gives exactly `x^2` even for tiny `x`.
#[inline]
pub fn curve(x: f64, alpha: f64) -> f64 {
    (-alpha * x).mul_add(x, (1.0 + alpha) * x).min(x)
}

/// `EC_n(x, alpha)` for a constant `alpha`.
pub fn curve_iterate(x: f64, alpha: f64, n: usize) -> f64 {
    (0..n).fold(x, |v, _| curve(v, alpha))
}

/// One application of the curve with a per-pixel `alpha`.
pub fn curve_step(x: &ImageBuffer, alpha: &ImageBuffer) -> Result<ImageBuffer> {
    if alpha.channels() != 1 {
        return Err(Error::shape("adjustment map must be single-channel"));
    }
    if x.min_value() < 0.0 || x.max_value() > 1.0 {
        return Err(Error::param("curve input must lie in [0, 1]"));
    }
    check_alpha(alpha)?;
    let out = x.zip_map(alpha, curve)?;
    debug_assert!(out.min_value() >= 0.0 && out.max_value() <= 1.0);
    Ok(out)
}

pub fn darken(x: &ImageBuffer, stack: &AdjustmentMapStack) -> Result<ImageBuffer> {
    stack.maps.iter().try_fold(x.clone(), |acc, alpha| curve_step(&acc, alpha))
}

/// `EC_10(0.5, -1)`: the darkest reachable calibrated exposure.
pub fn exposure_floor(iterations: usize) -> f64 {
    curve_iterate(CALIBRATION_ANCHOR, -1.0, iterations)
}

/// Constant `alpha` in `[-1, 0]` with `EC_n(0.5, alpha) = e`, by bisection.
///
/// `EC_n(0.5, alpha)` is increasing in `alpha`, so lower targets map to more
/// negative `alpha`.
pub fn calibrate_alpha(e: f64, iterations: usize) -> Result<f64> {
    let floor = exposure_floor(iterations);
    if !(e >= floor && e <= CALIBRATION_ANCHOR) {
        return Err(Error::UnreachableExposure { target: e, floor });
    }
    if e == CALIBRATION_ANCHOR {
        return Ok(0.0);
    }
    if e == floor {
        return Ok(-1.0);
    }
    let f = |a: f64| curve_iterate(CALIBRATION_ANCHOR, a, iterations) - e;
    let (mut lo, mut hi) = (-1.0f64, 0.0f64);
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let r = f(mid);
        if r.abs() < 1e-13 || mid == lo || mid == hi {
            break;
        }
        if r > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(mid)
}

/// Every map is `clamp(alpha_base + amplitude * phi_n, -1, 0)` with `phi_n`
/// a smooth zero-mean field from the sub-seed `[DARKEN, n]`.
pub fn build_adjustment_stack(config: &ExposureConfig, height: usize, width: usize) -> Result<AdjustmentMapStack> {
    config.validate()?;
    let base = calibrate_alpha(config.e, config.iterations)?;
    if config.variation_amplitude == 0.0 {
        return AdjustmentMapStack::constant(base, config.iterations, height, width);
    }
    let spec = NoiseSpec { cell: (height.max(width) as f64 / 3.0).max(4.0), octaves: 3, persistence: 0.5 };
    let maps = (0..config.iterations)
        .map(|n| {
            let field = noise::field(seed::derive(config.seed, &[seed::DARKEN, n as u64]), height, width, &spec);
            field.map(|v| (base + config.variation_amplitude * 2.0 * (v - 0.5)).clamp(-1.0, 0.0))
        })
        .collect();
    AdjustmentMapStack::new(maps)
}

pub fn sample_exposure(rng: &mut impl Rng) -> f64 {
    rng.random_range(EXPOSURE_RANGE.0..=EXPOSURE_RANGE.1)
}
