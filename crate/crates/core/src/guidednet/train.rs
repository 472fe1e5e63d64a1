use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::TinyDenoiser;
use crate::diffcore::{forward_sample, sample_latent, NoiseSchedule};
use crate::error::{Error, Result};
use crate::illumest::IlluminationMap;
use crate::image::ImageBuffer;
use crate::seed;

/// One training example: clean target, degraded condition and its
/// illumination estimate.
#[derive(Debug, Clone)]
pub struct TrainingTriple {
    pub clean: ImageBuffer,
    pub degraded: ImageBuffer,
    pub illum: IlluminationMap,
}

/// A noised example ready for the objective.
#[derive(Debug, Clone)]
pub struct LossItem<'a> {
    pub x0: &'a ImageBuffer,
    pub cond: &'a ImageBuffer,
    pub illum: &'a IlluminationMap,
    pub t: usize,
    pub eps: ImageBuffer,
}

/// Batch-mean of the per-item mean squared noise error, and its gradient
/// with respect to every parameter. Coordinates where `mask` is `false` get
/// exactly zero.
pub fn loss_gradient(
    model: &TinyDenoiser,
    batch: &[LossItem<'_>],
    sched: &NoiseSchedule,
    mask: Option<&[bool]>,
) -> Result<(f64, Vec<f64>)> {
    let n = model.params().len();
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::shape(format!("mask of length {} for {n} parameters", m.len())));
        }
    }
    if batch.is_empty() {
        return Err(Error::param("empty batch"));
    }
    let scale = batch.len() as f64;
    let parts: Vec<Result<(f64, Vec<f64>)>> = batch
        .par_iter()
        .map(|item| {
            if item.t == 0 {
                return Err(Error::param("training timestep must be >= 1"));
            }
            let x_t = forward_sample(item.x0, item.t, &item.eps, sched)?;
            let mut grad = vec![0.0; n];
            let k = item.eps.len() as f64;
            let mut sse = 0.0;
            model.predict_with_grad(
                &x_t,
                item.cond,
                item.illum.as_image(),
                item.t,
                |out| {
                    let mut d = out.clone();
                    for (dv, e) in d.data.iter_mut().zip(item.eps.data()) {
                        let r = *dv - e;
                        sse += r * r;
                        *dv = 2.0 * r / (k * scale);
                    }
                    d
                },
                &mut grad,
            )?;
            Ok((sse / k, grad))
        })
        .collect();
    let mut loss = 0.0;
    let mut total = vec![0.0; n];
    for part in parts {
        let (l, g) = part?;
        loss += l;
        for (a, b) in total.iter_mut().zip(&g) {
            *a += b;
        }
    }
    if let Some(m) = mask {
        for (g, &keep) in total.iter_mut().zip(m) {
            if !keep {
                *g = 0.0;
            }
        }
    }
    Ok((loss / scale, total))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 500, learning_rate: 0.2, batch_size: 8, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TinyDenoiser,
    /// Minibatch loss before each update.
    pub trace: Vec<f64>,
}

pub const MIN_TRAINING_TRIPLES: usize = 64;
pub const TOY_PATCH: usize = 16;
pub const SMOOTHING_WINDOW: usize = 20;

/// Plain fixed-step gradient descent on the noise-prediction objective.
/// Each step draws `batch_size` examples, timesteps uniform in `1..=T` and
/// Gaussian noise from the seeded stream. Parameters excluded by `mask` never
/// move.
pub fn train_toy(
    model: &TinyDenoiser,
    dataset: &[TrainingTriple],
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    mask: Option<&[bool]>,
) -> Result<TrainOutcome> {
    if dataset.len() < MIN_TRAINING_TRIPLES {
        return Err(Error::param(format!(
            "toy training needs at least {MIN_TRAINING_TRIPLES} triples, got {}",
            dataset.len()
        )));
    }
    for tr in dataset {
        if tr.clean.dims() != (TOY_PATCH, TOY_PATCH, 3) {
            return Err(Error::shape(format!(
                "toy triples must be {TOY_PATCH}x{TOY_PATCH}x3, got {:?}",
                tr.clean.dims()
            )));
        }
    }
    if cfg.batch_size == 0 || !cfg.learning_rate.is_finite() || cfg.learning_rate < 0.0 {
        return Err(Error::param("batch size must be positive and learning rate finite, >= 0"));
    }
    let mut model = model.clone();
    let mut rng = seed::child_rng(cfg.seed, &[seed::BATCH]);
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut initial = None;
    for step in 0..cfg.steps {
        let batch: Vec<LossItem<'_>> = (0..cfg.batch_size)
            .map(|_| {
                let tr = &dataset[rng.random_range(0..dataset.len())];
                let t = rng.random_range(1..=sched.steps());
                let eps = sample_latent(&mut rng, TOY_PATCH, TOY_PATCH, 3);
                LossItem { x0: &tr.clean, cond: &tr.degraded, illum: &tr.illum, t, eps }
            })
            .collect();
        let (loss, grad) = loss_gradient(&model, &batch, sched, mask)?;
        trace.push(loss);
        let init = *initial.get_or_insert(loss);
        if !loss.is_finite() || loss > 10.0 * init {
            return Err(Error::Diverged { step, loss, initial: init, trace });
        }
        if cfg.learning_rate > 0.0 {
            for (p, g) in model.params_mut().iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
        }
    }
    Ok(TrainOutcome { model, trace })
}

/// Trailing moving average with the given window (shorter at the start).
pub fn smoothed(trace: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    let mut out = Vec::with_capacity(trace.len());
    let mut acc = 0.0;
    for (i, v) in trace.iter().enumerate() {
        acc += v;
        if i >= w {
            acc -= trace[i - w];
        }
        out.push(acc / (i + 1).min(w) as f64);
    }
    out
}

/// `(initial, final)` smoothed loss: means of the first and the last
/// `window` entries.
pub fn loss_endpoints(trace: &[f64], window: usize) -> Option<(f64, f64)> {
    let w = window.max(1);
    if trace.len() < w {
        return None;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    Some((mean(&trace[..w]), mean(&trace[trace.len() - w..])))
}
