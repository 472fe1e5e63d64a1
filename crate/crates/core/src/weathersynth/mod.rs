//! Adverse-weather degradation: compositing models and their procedural inputs.
//!
//! | kind       | model                                   |
//! |------------|-----------------------------------------|
//! | `raindrop` | `I = (1 - M) * C + R`                   |
//! | `rain`     | `I = T * (C + sum_i R_i) + (1 - T) * A` |
//! | `snow`     | `I = (1 - M) * C + M * S`               |
//! | `fog/haze` | `I = T * C + (1 - T) * A`               |
//!
//! Fog and haze share a model and differ only in how uniform `T` is.

mod composite;
mod generate;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use composite::{composite_haze, composite_rain, composite_raindrop, composite_snow};
pub use generate::{
    gen_particle_field, gen_rain_streaks, gen_transmission, ParticleKind, StreakGeometry, StreakLayerInfo,
    UNIFORM_DEPTH,
};

use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DegradationKind {
    Raindrop,
    Rain,
    Snow,
    Fog,
    Haze,
}

impl DegradationKind {
    pub const ALL: [DegradationKind; 5] = [
        DegradationKind::Raindrop,
        DegradationKind::Rain,
        DegradationKind::Snow,
        DegradationKind::Fog,
        DegradationKind::Haze,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DegradationKind::Raindrop => "raindrop",
            DegradationKind::Rain => "rain",
            DegradationKind::Snow => "snow",
            DegradationKind::Fog => "fog",
            DegradationKind::Haze => "haze",
        }
    }
}

impl fmt::Display for DegradationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DegradationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        DegradationKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            Error::param(format!("unknown degradation kind {s:?} (expected raindrop, rain, snow, fog or haze)"))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherParams {
    pub seed: u64,
    /// Number of streak layers `n` (rain).
    pub streak_layers: usize,
    pub streak: StreakGeometry,
    pub streak_intensity: f64,
    /// Target covered fraction (snow, raindrop).
    pub density: f64,
    pub radius_min: f64,
    pub radius_max: f64,
    /// Per-channel `A`.
    pub atmospheric_light: [f64; 3],
    /// Extinction coefficient (fog, haze, rain veil).
    pub beta: f64,
    /// 0 gives a smooth spatially varying `T` (fog), 1 a constant one (haze).
    pub haze_uniformity: f64,
}

impl WeatherParams {
    /// Defaults tuned per kind.
    pub fn for_kind(kind: DegradationKind, seed: u64) -> Self {
        let base = WeatherParams {
            seed,
            streak_layers: 3,
            streak: StreakGeometry { angle_deg: 12.0, jitter_deg: 4.0, length: 14.0, width: 1.5, per_kilopixel: 2.0 },
            streak_intensity: 0.6,
            density: 0.08,
            radius_min: 1.0,
            radius_max: 3.0,
            atmospheric_light: [0.8; 3],
            beta: 1.2,
            haze_uniformity: 0.0,
        };
        match kind {
            DegradationKind::Raindrop => WeatherParams { density: 0.15, radius_min: 3.0, radius_max: 9.0, ..base },
            DegradationKind::Rain => WeatherParams { beta: 0.5, haze_uniformity: 0.6, ..base },
            DegradationKind::Snow => base,
            DegradationKind::Fog => base,
            DegradationKind::Haze => WeatherParams { beta: 1.0, haze_uniformity: 0.9, ..base },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.atmospheric_light.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::param("atmospheric light must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Everything that was used or drawn while degrading one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeatherMetadata {
    pub kind: DegradationKind,
    pub params: WeatherParams,
    pub particle_count: Option<usize>,
    pub streak_layers: Vec<StreakLayerInfo>,
    pub mean_transmission: Option<f64>,
}

/// Generates the kind's procedural inputs from `params.seed` and composites
/// them over `clean`.
pub fn synthesize_weather(
    clean: &ImageBuffer,
    kind: DegradationKind,
    params: &WeatherParams,
) -> Result<(ImageBuffer, WeatherMetadata)> {
    params.validate()?;
    let (h, w, ch) = clean.dims();
    let light = &params.atmospheric_light[..ch.min(3)];
    let mut meta = WeatherMetadata {
        kind,
        params: params.clone(),
        particle_count: None,
        streak_layers: Vec::new(),
        mean_transmission: None,
    };
    let weather_seed = params.seed;
    let transmission = || {
        gen_transmission(seed::derive(weather_seed, &[seed::TRANSMISSION]), h, w, params.beta, params.haze_uniformity)
    };
    let radius = (params.radius_min, params.radius_max);
    let out = match kind {
        DegradationKind::Raindrop => {
            let (m, r, n) = gen_particle_field(weather_seed, clean, params.density, radius, ParticleKind::Raindrop)?;
            meta.particle_count = Some(n);
            composite_raindrop(clean, &m, &r)?
        }
        DegradationKind::Snow => {
            let (m, s, n) = gen_particle_field(weather_seed, clean, params.density, radius, ParticleKind::Snow)?;
            meta.particle_count = Some(n);
            composite_snow(clean, &m, &s)?
        }
        DegradationKind::Rain => {
            let (layers, info) =
                gen_rain_streaks(weather_seed, h, w, params.streak_layers, &params.streak, params.streak_intensity)?;
            let t = transmission()?;
            meta.streak_layers = info;
            meta.mean_transmission = Some(t.mean());
            composite_rain(clean, &layers, &t, light)?
        }
        DegradationKind::Fog | DegradationKind::Haze => {
            let t = transmission()?;
            meta.mean_transmission = Some(t.mean());
            composite_haze(clean, &t, light)?
        }
    };
    Ok((out, meta))
}
