//! The standard toy training set: procedural 16x16 scenes pushed through the
//! full degradation pipeline, paired with their illumination estimates.

use crate::error::Result;
use crate::guidednet::{TrainingTriple, TOY_PATCH};
use crate::illumest::{estimate_illumination, IlluminationParams};
use crate::image::ImageBuffer;
use crate::noise::{self, NoiseSpec};
use crate::pipeline::{synthesize, SynthOptions};
use crate::seed;
use crate::weathersynth::DegradationKind;

pub const STANDARD_SIZE: usize = 64;

/// A smooth, well-lit colour patch.
pub fn toy_scene(scene_seed: u64, size: usize) -> ImageBuffer {
    let spec = NoiseSpec { cell: 6.0, octaves: 2, persistence: 0.5 };
    let fields: Vec<ImageBuffer> =
        (0..3).map(|k| noise::field(seed::derive(scene_seed, &[k]), size, size, &spec)).collect();
    let shade = noise::field(
        seed::derive(scene_seed, &[3]),
        size,
        size,
        &NoiseSpec { cell: 12.0, octaves: 1, persistence: 0.5 },
    );
    ImageBuffer::from_fn(size, size, 3, |r, c, k| {
        (0.15 + 0.55 * fields[k].get(r, c, 0) + 0.3 * shade.get(r, c, 0)).clamp(0.0, 1.0)
    })
}

/// Builds `count` triples; kinds cycle through every degradation.
pub fn toy_dataset(seed_value: u64, count: usize) -> Result<Vec<TrainingTriple>> {
    let opts = SynthOptions::default();
    (0..count)
        .map(|i| {
            let image_seed = seed::derive(seed_value, &[seed::TOYSET, i as u64]);
            let clean = toy_scene(image_seed, TOY_PATCH);
            let kind = DegradationKind::ALL[i % DegradationKind::ALL.len()];
            let (degraded, _) = synthesize(&clean, kind, image_seed, &opts)?;
            let illum = estimate_illumination(&degraded, &IlluminationParams::default())?;
            Ok(TrainingTriple { clean, degraded, illum })
        })
        .collect()
}

pub fn standard_toy_set(seed_value: u64) -> Result<Vec<TrainingTriple>> {
    toy_dataset(seed_value, STANDARD_SIZE)
}
