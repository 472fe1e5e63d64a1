//! Dataset synthesis, restoration, evaluation and toy training behind one
//! command-line surface. Each subcommand is a plain function so the pipelines
//! can be driven from tests without spawning processes.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

mod eval;
mod manifest;
mod restore;
mod synth;
mod train;

pub use eval::{cmd_eval, EvalArgs};
pub use manifest::{verify_manifest, Manifest, ManifestEntry, MANIFEST_FILE, MANIFEST_VERSION};
pub use restore::{cmd_restore, RestoreArgs};
pub use synth::{cmd_synth, KindSelection, SynthArgs};
pub use train::{cmd_train_toy, manifest_triples, TrainArgs, TrainReport};

/// Failure classes that map onto process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or flag combinations (exit 1).
    #[error("{0}")]
    Usage(String),
    /// Missing, unreadable or inconsistent data (exit 2).
    #[error(transparent)]
    Data(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }
}

impl From<nightdiff::Error> for CliError {
    fn from(e: nightdiff::Error) -> Self {
        CliError::Data(e.into())
    }
}

pub type CliResult<T> = Result<T, CliError>;

pub(crate) fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

#[derive(Debug, Parser)]
#[command(
    name = "nightdiff",
    version,
    about = "Night-scene degradation synthesis and illumination-guided diffusion restoration"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Degrade clean PNGs (weather, then darkening) and write a manifest.
    Synth(SynthArgs),
    /// Restore degraded PNGs with tiled implicit sampling.
    Restore(RestoreArgs),
    /// PSNR/SSIM between matching files of two directories.
    Eval(EvalArgs),
    /// Train the small denoiser on 16x16 crops.
    TrainToy(TrainArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Parallelism {
    /// Worker threads (0 = all cores). Outputs do not depend on this.
    #[arg(long, default_value_t = 0)]
    pub jobs: usize,
}

/// Runs `f` inside a pool of the requested size.
pub(crate) fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs).build().map_err(|e| CliError::Data(e.into()))?;
    Ok(pool.install(f))
}

/// Sorted `*.png` files of a directory.
pub(crate) fn list_pngs(dir: &Path) -> anyhow::Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| anyhow::anyhow!("cannot read directory {}: {e}", dir.display()))?;
    let mut out = Vec::new();
    for entry in rd {
        let p = entry?.path();
        if p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

pub(crate) fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

pub fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a).map(|_| ()),
        Command::Restore(a) => cmd_restore(&a).map(|_| ()),
        Command::Eval(a) => cmd_eval(&a).map(|_| ()),
        Command::TrainToy(a) => cmd_train_toy(&a).map(|_| ()),
    }
}
