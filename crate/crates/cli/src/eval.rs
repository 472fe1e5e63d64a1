use std::collections::BTreeSet;
use std::path::PathBuf;

use anyhow::{bail, Context};
use clap::Args;
use nightdiff::image::load_image;
use nightdiff::metrics::{psnr, ssim, ImageScore};
use nightdiff::MetricReport;

use crate::{file_name, list_pngs, CliResult};

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    /// Restored images.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground truth with the same file names.
    #[arg(long)]
    pub gt: PathBuf,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

/// Per-image and mean PSNR/SSIM. The human table goes to standard error;
/// standard output gets one tab-separated line per image plus a `mean` line.
pub fn cmd_eval(args: &EvalArgs) -> CliResult<MetricReport> {
    let pred: BTreeSet<String> = list_pngs(&args.pred)?.iter().map(|p| file_name(p)).collect();
    let gt: BTreeSet<String> = list_pngs(&args.gt)?.iter().map(|p| file_name(p)).collect();
    if pred != gt || pred.is_empty() {
        let only_pred: Vec<&String> = pred.difference(&gt).collect();
        let only_gt: Vec<&String> = gt.difference(&pred).collect();
        bail_unmatched(&only_pred, &only_gt)?;
    }
    let mut scores = Vec::with_capacity(pred.len());
    for name in &pred {
        let a = load_image(args.pred.join(name))?.to_rgb();
        let b = load_image(args.gt.join(name))?.to_rgb();
        let score = ImageScore {
            name: name.clone(),
            psnr: psnr(&a, &b, 1.0).with_context(|| format!("comparing {name}"))?,
            ssim: ssim(&a, &b).with_context(|| format!("comparing {name}"))?,
        };
        scores.push(score);
    }
    let report = MetricReport::from_scores(scores);
    eprintln!("{:<32} {:>9} {:>8}", "image", "PSNR(dB)", "SSIM");
    for s in &report.images {
        eprintln!("{:<32} {:>9.3} {:>8.4}", s.name, s.psnr, s.ssim);
        println!("{}\t{}\t{}", s.name, s.psnr, s.ssim);
    }
    eprintln!("{:<32} {:>9.3} {:>8.4}", "mean", report.mean_psnr, report.mean_ssim);
    println!("mean\t{}\t{}", report.mean_psnr, report.mean_ssim);
    if let Some(path) = &args.json {
        let mut text = serde_json::to_string_pretty(&report).context("serializing report")?;
        text.push('\n');
        std::fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))?;
    }
    Ok(report)
}

fn bail_unmatched(only_pred: &[&String], only_gt: &[&String]) -> anyhow::Result<()> {
    if only_pred.is_empty() && only_gt.is_empty() {
        bail!("no PNG files to compare");
    }
    let list = |v: &[&String]| v.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ");
    bail!("unmatched files: only in predictions [{}]; only in ground truth [{}]", list(only_pred), list(only_gt))
}
