use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::Args;
use nightdiff::diffcore::{Denoiser, NoiseSchedule, OracleDenoiser};
use nightdiff::guidednet::load_model;
use nightdiff::illumest::{estimate_illumination, IlluminationParams};
use nightdiff::image::{load_image, save_image};
use nightdiff::seed;
use nightdiff::tiler::{tiled_restore, DEFAULT_GRID_STEP, DEFAULT_PATCH};

use crate::{file_name, list_pngs, usage, CliResult, Parallelism};

#[derive(Debug, Clone, Args)]
pub struct RestoreArgs {
    /// A degraded PNG or a directory of them.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Trained denoiser parameters.
    #[arg(long, conflicts_with = "denoiser")]
    pub model: Option<PathBuf>,
    /// Alternative denoiser; `oracle:<clean_dir>` predicts the exact noise
    /// towards same-named ground-truth images.
    #[arg(long)]
    pub denoiser: Option<String>,
    #[arg(long, default_value_t = DEFAULT_PATCH)]
    pub patch: usize,
    #[arg(long, default_value_t = DEFAULT_GRID_STEP)]
    pub grid_step: usize,
    /// Implicit sampling steps.
    #[arg(long, default_value_t = 40)]
    pub steps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub parallel: Parallelism,
}

enum Source {
    Model(nightdiff::TinyDenoiser),
    Oracle(PathBuf),
}

fn parse_source(args: &RestoreArgs) -> CliResult<Source> {
    match (&args.model, &args.denoiser) {
        (Some(path), None) => Ok(Source::Model(load_model(path)?)),
        (None, Some(spec)) => match spec.strip_prefix("oracle:") {
            Some(dir) if !dir.is_empty() => Ok(Source::Oracle(PathBuf::from(dir))),
            _ => Err(usage(format!("unknown denoiser {spec:?} (expected oracle:<clean_dir>)"))),
        },
        _ => Err(usage("exactly one of --model or --denoiser is required")),
    }
}

/// Restores every input image; returns the written paths in input order.
pub fn cmd_restore(args: &RestoreArgs) -> CliResult<Vec<PathBuf>> {
    if args.steps == 0 || args.patch == 0 || args.grid_step == 0 {
        return Err(usage("--steps, --patch and --grid-step must be positive"));
    }
    let source = parse_source(args)?;
    let inputs = if args.input.is_dir() {
        list_pngs(&args.input)?
    } else if args.input.is_file() {
        vec![args.input.clone()]
    } else {
        return Err(anyhow!("input {} does not exist", args.input.display()).into());
    };
    if inputs.is_empty() {
        return Err(anyhow!("no PNG files in {}", args.input.display()).into());
    }
    std::fs::create_dir_all(&args.output)
        .with_context(|| format!("cannot create output directory {}", args.output.display()))?;
    let sched = NoiseSchedule::default();
    let mut written = Vec::with_capacity(inputs.len());
    crate::with_pool(args.parallel.jobs, || -> CliResult<()> {
        for (idx, path) in inputs.iter().enumerate() {
            let started = Instant::now();
            let out = restore_one(args, &source, &sched, idx, path)?;
            eprintln!("restore {} in {:.2}s", file_name(path), started.elapsed().as_secs_f64());
            println!("{}", out.display());
            written.push(out);
        }
        Ok(())
    })??;
    Ok(written)
}

fn restore_one(
    args: &RestoreArgs,
    source: &Source,
    sched: &NoiseSchedule,
    idx: usize,
    path: &Path,
) -> CliResult<PathBuf> {
    let cond = load_image(path)?.to_rgb();
    let (h, w, _) = cond.dims();
    if args.patch > h || args.patch > w {
        return Err(anyhow!(
            "patch size {} exceeds image {} ({h}x{w}); pass a smaller --patch",
            args.patch,
            path.display()
        )
        .into());
    }
    let illum = estimate_illumination(&cond, &IlluminationParams::default())?;
    let oracle;
    let denoiser: &dyn Denoiser = match source {
        Source::Model(m) => m,
        Source::Oracle(dir) => {
            let target = load_image(dir.join(file_name(path)))?.to_rgb();
            oracle = OracleDenoiser::new(target, sched.clone());
            &oracle
        }
    };
    let mut rng = seed::child_rng(args.seed, &[seed::LATENT, idx as u64]);
    let restored = tiled_restore(&cond, &illum, denoiser, sched, args.steps, args.patch, args.grid_step, &mut rng)?;
    let out = args.output.join(file_name(path));
    save_image(&restored, &out)?;
    Ok(out)
}
