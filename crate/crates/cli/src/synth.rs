use std::path::PathBuf;

use anyhow::{anyhow, Context};
use clap::{Args, ValueEnum};
use nightdiff::image::{load_image, save_image};
use nightdiff::lowlight::EXPOSURE_RANGE;
use nightdiff::pipeline::{synthesize, SynthOptions};
use nightdiff::seed;
use nightdiff::weathersynth::DegradationKind;
use rayon::prelude::*;

use crate::manifest::{Manifest, ManifestEntry, MANIFEST_FILE, MANIFEST_VERSION};
use crate::{file_name, list_pngs, usage, with_pool, CliResult, Parallelism};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindSelection {
    Raindrop,
    Rain,
    Snow,
    Fog,
    Haze,
    /// Every kind in turn.
    All,
}

impl KindSelection {
    pub fn kinds(self) -> Vec<DegradationKind> {
        match self {
            KindSelection::Raindrop => vec![DegradationKind::Raindrop],
            KindSelection::Rain => vec![DegradationKind::Rain],
            KindSelection::Snow => vec![DegradationKind::Snow],
            KindSelection::Fog => vec![DegradationKind::Fog],
            KindSelection::Haze => vec![DegradationKind::Haze],
            KindSelection::All => DegradationKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// Directory of clean PNGs.
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory for degraded PNGs and the manifest.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum)]
    pub kind: KindSelection,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Degraded variants per clean image and kind.
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// Override the kind's extinction coefficient.
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, default_value_t = EXPOSURE_RANGE.0)]
    pub e_min: f64,
    #[arg(long, default_value_t = EXPOSURE_RANGE.1)]
    pub e_max: f64,
    /// Amplitude of the spatial darkness variation, in [0, 0.2].
    #[arg(long, default_value_t = 0.05)]
    pub variation: f64,
    #[command(flatten)]
    pub parallel: Parallelism,
}

struct Job {
    source: usize,
    kind: DegradationKind,
    variant: usize,
}

pub fn cmd_synth(args: &SynthArgs) -> CliResult<Manifest> {
    if args.count == 0 {
        return Err(usage("--count must be at least 1"));
    }
    if !(args.e_min > 0.0 && args.e_min <= args.e_max && args.e_max <= 0.5) {
        return Err(usage(format!(
            "exposure range must satisfy 0 < e-min <= e-max <= 0.5, got [{}, {}]",
            args.e_min, args.e_max
        )));
    }
    if !(0.0..=0.2).contains(&args.variation) {
        return Err(usage("--variation must lie in [0, 0.2]"));
    }
    if args.beta.is_some_and(|b| !(b.is_finite() && b > 0.0)) {
        return Err(usage("--beta must be finite and positive"));
    }
    let sources = list_pngs(&args.input)?;
    if sources.is_empty() {
        return Err(anyhow!("no PNG files in {}", args.input.display()).into());
    }
    std::fs::create_dir_all(&args.output)
        .with_context(|| format!("cannot create output directory {}", args.output.display()))?;
    let opts = SynthOptions { beta: args.beta, exposure_range: (args.e_min, args.e_max), variation: args.variation };
    let kinds = args.kind.kinds();
    let jobs: Vec<Job> = (0..sources.len())
        .flat_map(|source| {
            kinds.iter().enumerate().flat_map(move |(ki, &kind)| {
                (0..args.count).map(move |v| Job { source, kind, variant: ki * args.count + v })
            })
        })
        .collect();

    let entries = with_pool(args.parallel.jobs, || {
        jobs.par_iter()
            .map(|job| -> anyhow::Result<ManifestEntry> {
                let src = &sources[job.source];
                let clean = load_image(src)?;
                let image_seed = seed::derive(args.seed, &[seed::IMAGE, job.source as u64, job.variant as u64]);
                let (degraded, rec) = synthesize(&clean, job.kind, image_seed, &opts)?;
                let stem = src.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let name = format!("{stem}_{}_{:02}.png", job.kind, job.variant);
                save_image(&degraded, args.output.join(&name))?;
                eprintln!("synth {} -> {name} (e = {:.4})", file_name(src), rec.exposure.e);
                Ok(ManifestEntry::from_record(src.display().to_string(), name, job.variant, rec))
            })
            .collect::<anyhow::Result<Vec<_>>>()
    })??;

    let manifest = Manifest { version: MANIFEST_VERSION.to_string(), seed: args.seed, entries };
    let path = args.output.join(MANIFEST_FILE);
    manifest.save(&path)?;
    println!("{}", path.display());
    Ok(manifest)
}
