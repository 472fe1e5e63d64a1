use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use nightdiff::image::{load_image, quantize};
use nightdiff::lowlight::{ExposureConfig, DEFAULT_ITERATIONS};
use nightdiff::pipeline::{replay, SynthRecord};
use nightdiff::weathersynth::{DegradationKind, WeatherMetadata};
use serde::{Deserialize, Serialize};

pub const MANIFEST_VERSION: &str = "nightdiff-manifest/1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clean_path: String,
    /// Relative to the manifest's directory.
    pub degraded_path: String,
    pub kind: DegradationKind,
    /// Exposure target `e`.
    pub exposure: f64,
    /// Per-image seed all parameters were drawn from.
    pub seed: u64,
    pub variant: usize,
    pub variation: f64,
    pub curve_iterations: usize,
    pub weather: WeatherMetadata,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
}

impl ManifestEntry {
    pub fn record(&self) -> SynthRecord {
        SynthRecord {
            image_seed: self.seed,
            weather: self.weather.clone(),
            exposure: ExposureConfig {
                e: self.exposure,
                iterations: self.curve_iterations,
                variation_amplitude: self.variation,
                seed: self.seed,
            },
        }
    }

    pub(crate) fn from_record(clean_path: String, degraded_path: String, variant: usize, rec: SynthRecord) -> Self {
        debug_assert_eq!(rec.exposure.iterations, DEFAULT_ITERATIONS);
        Self {
            clean_path,
            degraded_path,
            kind: rec.weather.kind,
            exposure: rec.exposure.e,
            seed: rec.image_seed,
            variant,
            variation: rec.exposure.variation_amplitude,
            curve_iterations: rec.exposure.iterations,
            weather: rec.weather,
        }
    }
}

impl Manifest {
    /// Canonical text: sorted keys, two-space indent, trailing newline.
    pub fn to_json(&self) -> String {
        let value = serde_json::to_value(self).expect("manifest serializes");
        let mut s = serde_json::to_string_pretty(&value).expect("value serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> anyhow::Result<Self> {
        let m: Manifest = serde_json::from_str(text).context("malformed manifest")?;
        if m.version != MANIFEST_VERSION {
            bail!("unsupported manifest version {:?}", m.version);
        }
        Ok(m)
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read manifest {}", path.display()))?;
        Self::from_json(&text)
    }

    pub fn save(&self, path: &Path) -> anyhow::Result<()> {
        std::fs::write(path, self.to_json()).with_context(|| format!("cannot write manifest {}", path.display()))
    }

    pub fn degraded_path(&self, base: &Path, entry: &ManifestEntry) -> PathBuf {
        base.join(&entry.degraded_path)
    }

    /// Every referenced file must exist.
    pub fn validate(&self, base: &Path) -> anyhow::Result<()> {
        let missing: Vec<String> = self
            .entries
            .iter()
            .flat_map(|e| [PathBuf::from(&e.clean_path), self.degraded_path(base, e)])
            .filter(|p| !p.is_file())
            .map(|p| p.display().to_string())
            .collect();
        if !missing.is_empty() {
            bail!("manifest references missing files: {}", missing.join(", "));
        }
        Ok(())
    }
}

/// Re-renders every entry from its clean source and compares the 8-bit result
/// with the stored PNG. Returns the number of entries checked.
pub fn verify_manifest(manifest_path: &Path) -> anyhow::Result<usize> {
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    manifest.validate(base)?;
    for entry in &manifest.entries {
        let clean = load_image(&entry.clean_path)?;
        let rendered = replay(&clean, &entry.record())?;
        let stored = load_image(manifest.degraded_path(base, entry))?;
        let same = rendered.dims() == stored.dims()
            && rendered.data().iter().zip(stored.data()).all(|(a, b)| quantize(*a) == quantize(*b));
        if !same {
            bail!("{} does not match its manifest record", entry.degraded_path);
        }
    }
    Ok(manifest.entries.len())
}
