use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::Args;
use nightdiff::diffcore::NoiseSchedule;
use nightdiff::guidednet::{
    loss_endpoints, save_model, train_toy, Architecture, TinyDenoiser, TrainConfig, TrainingTriple,
    MIN_TRAINING_TRIPLES, SMOOTHING_WINDOW, TOY_PATCH,
};
use nightdiff::illumest::{estimate_illumination, IlluminationParams};
use nightdiff::image::{load_image, ImageBuffer};
use nightdiff::seed;
use nightdiff::toy::standard_toy_set;
use rand::Rng;

use crate::manifest::Manifest;
use crate::{usage, CliResult, Parallelism};

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Synthesis manifest; without it the built-in procedural toy set is used.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 500)]
    pub steps: usize,
    #[arg(long, default_value_t = TrainConfig::default().learning_rate)]
    pub lr: f64,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Where to write the trained parameters.
    #[arg(long)]
    pub out_model: PathBuf,
    /// Loss trace, one `step<TAB>loss` line per step. Defaults to the model
    /// path with a `.trace.tsv` suffix.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Train the ablated model without illumination injection.
    #[arg(long)]
    pub no_illum: bool,
    #[command(flatten)]
    pub parallel: Parallelism,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub model: TinyDenoiser,
    pub trace: Vec<f64>,
    pub trace_path: PathBuf,
}

/// 16x16 crops from manifest pairs, enough of them to reach the minimum set
/// size. Crop corners come from the seeded stream.
pub fn manifest_triples(manifest_path: &Path, seed_value: u64) -> anyhow::Result<Vec<TrainingTriple>> {
    let manifest = Manifest::load(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    manifest.validate(base)?;
    if manifest.entries.is_empty() {
        bail!("manifest {} has no entries", manifest_path.display());
    }
    let per_entry = MIN_TRAINING_TRIPLES.div_ceil(manifest.entries.len());
    let mut out = Vec::with_capacity(per_entry * manifest.entries.len());
    for (i, entry) in manifest.entries.iter().enumerate() {
        let clean = load_image(&entry.clean_path)?.to_rgb();
        let degraded = load_image(manifest.degraded_path(base, entry))?.to_rgb();
        if clean.dims() != degraded.dims() {
            bail!("{} and its clean source differ in size", entry.degraded_path);
        }
        let (h, w, _) = clean.dims();
        if h < TOY_PATCH || w < TOY_PATCH {
            bail!("{} is smaller than {TOY_PATCH}x{TOY_PATCH}", entry.clean_path);
        }
        let mut rng = seed::child_rng(seed_value, &[seed::TOYSET, i as u64]);
        for _ in 0..per_entry {
            let r = rng.random_range(0..=h - TOY_PATCH);
            let c = rng.random_range(0..=w - TOY_PATCH);
            let crop = |img: &ImageBuffer| img.crop(r, c, TOY_PATCH, TOY_PATCH);
            let degraded = crop(&degraded)?;
            let illum = estimate_illumination(&degraded, &IlluminationParams::default())?;
            out.push(TrainingTriple { clean: crop(&clean)?, degraded, illum });
        }
    }
    Ok(out)
}

fn trace_text(trace: &[f64]) -> String {
    trace.iter().enumerate().map(|(i, l)| format!("{i}\t{l}\n")).collect()
}

pub fn cmd_train_toy(args: &TrainArgs) -> CliResult<TrainReport> {
    if args.batch == 0 || !(args.lr.is_finite() && args.lr >= 0.0) {
        return Err(usage("--batch must be positive and --lr finite and non-negative"));
    }
    let data = match &args.manifest {
        Some(p) => manifest_triples(p, args.seed)?,
        None => standard_toy_set(args.seed)?,
    };
    let mut model = TinyDenoiser::init(Architecture::default(), args.seed)?;
    model.set_illum_injection(!args.no_illum);
    let cfg = TrainConfig { steps: args.steps, learning_rate: args.lr, batch_size: args.batch, seed: args.seed };
    let sched = NoiseSchedule::default();
    let trace_path = args.trace.clone().unwrap_or_else(|| {
        let mut p = args.out_model.clone().into_os_string();
        p.push(".trace.tsv");
        PathBuf::from(p)
    });
    eprintln!("training on {} triples for {} steps", data.len(), cfg.steps);
    let outcome = crate::with_pool(args.parallel.jobs, || train_toy(&model, &data, &sched, &cfg, None))?;
    let outcome = match outcome {
        Ok(o) => o,
        Err(nightdiff::Error::Diverged { step, loss, initial, trace }) => {
            std::fs::write(&trace_path, trace_text(&trace))
                .with_context(|| format!("cannot write {}", trace_path.display()))?;
            return Err(anyhow::anyhow!(
                "training diverged at step {step} (loss {loss}, initial {initial}); trace in {}",
                trace_path.display()
            )
            .into());
        }
        Err(e) => return Err(e.into()),
    };
    save_model(&outcome.model, &args.out_model)?;
    std::fs::write(&trace_path, trace_text(&outcome.trace))
        .with_context(|| format!("cannot write {}", trace_path.display()))?;
    if let Some((first, last)) = loss_endpoints(&outcome.trace, SMOOTHING_WINDOW) {
        println!("initial_loss\t{first}\nfinal_loss\t{last}\nratio\t{}", last / first);
    }
    println!("model\t{}\ntrace\t{}", args.out_model.display(), trace_path.display());
    Ok(TrainReport { model: outcome.model, trace: outcome.trace, trace_path })
}
