//! Weather followed by darkening, driven by one per-image seed.
//!
//! Weather always comes first so particles and streaks are darkened together
//! with the scene instead of staying bright on top of a dark image.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::lowlight::{build_adjustment_stack, darken, ExposureConfig, DEFAULT_ITERATIONS, EXPOSURE_RANGE};
use crate::seed;
use crate::weathersynth::{synthesize_weather, DegradationKind, WeatherMetadata, WeatherParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthOptions {
    /// Overrides the kind's default extinction coefficient.
    pub beta: Option<f64>,
    /// Exposure targets are drawn uniformly from this closed range.
    pub exposure_range: (f64, f64),
    pub variation: f64,
}

impl Default for SynthOptions {
    fn default() -> Self {
        Self { beta: None, exposure_range: EXPOSURE_RANGE, variation: 0.05 }
    }
}

/// Everything needed to regenerate one degraded image from its clean source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub image_seed: u64,
    pub weather: WeatherMetadata,
    pub exposure: ExposureConfig,
}

/// Draws every parameter for one image from `image_seed`, then renders it.
pub fn synthesize(
    clean: &ImageBuffer,
    kind: DegradationKind,
    image_seed: u64,
    opts: &SynthOptions,
) -> Result<(ImageBuffer, SynthRecord)> {
    let (lo, hi) = opts.exposure_range;
    if !(lo > 0.0 && lo <= hi && hi <= 0.5) {
        return Err(Error::param(format!("exposure range must satisfy 0 < min <= max <= 0.5, got [{lo}, {hi}]")));
    }
    let mut params = WeatherParams::for_kind(kind, seed::derive(image_seed, &[seed::WEATHER]));
    if let Some(beta) = opts.beta {
        if !(beta.is_finite() && beta > 0.0) {
            return Err(Error::param(format!("beta must be finite and > 0, got {beta}")));
        }
        params.beta = beta;
    }
    let e = seed::child_rng(image_seed, &[seed::EXPOSURE]).random_range(lo..=hi);
    let exposure =
        ExposureConfig { e, iterations: DEFAULT_ITERATIONS, variation_amplitude: opts.variation, seed: image_seed };
    render(clean, kind, &params, &exposure, image_seed)
}

/// Deterministic rendering from fully specified parameters.
pub fn render(
    clean: &ImageBuffer,
    kind: DegradationKind,
    params: &WeatherParams,
    exposure: &ExposureConfig,
    image_seed: u64,
) -> Result<(ImageBuffer, SynthRecord)> {
    let (weathered, weather) = synthesize_weather(clean, kind, params)?;
    let stack = build_adjustment_stack(exposure, clean.height(), clean.width())?;
    let degraded = darken(&weathered, &stack)?;
    Ok((degraded, SynthRecord { image_seed, weather, exposure: *exposure }))
}

/// Re-renders from a record.
pub fn replay(clean: &ImageBuffer, record: &SynthRecord) -> Result<ImageBuffer> {
    render(clean, record.weather.kind, &record.weather.params, &record.exposure, record.image_seed).map(|(img, _)| img)
}
