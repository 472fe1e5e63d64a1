use crate::error::{Error, Result};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// `beta_t` for `t = 1..=T` and the cumulative `alpha_bar_t = prod_{s<=t} (1 - beta_s)`,
/// with the convention `alpha_bar_0 = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
    sqrt_alpha_bar: Vec<f64>,
    sqrt_one_minus_alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear `beta` from `beta_start` to `beta_end` over `steps` steps.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::param("schedule needs at least one step"));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::param(format!("need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}")));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas)
    }

    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() || betas.iter().any(|&b| !(b > 0.0 && b < 1.0)) {
            return Err(Error::param("every beta must lie in (0, 1)"));
        }
        // Running product carried as an unevaluated sum hi + lo (error-free
        // transformation via fused multiply-add), so 1000 factors lose no
        // more than a rounding or two.
        let mut alpha_bar = Vec::with_capacity(betas.len() + 1);
        alpha_bar.push(1.0);
        let (mut hi, mut lo) = (1.0f64, 0.0f64);
        for &b in &betas {
            let a = 1.0 - b;
            let p = hi * a;
            let err = hi.mul_add(a, -p);
            lo = lo.mul_add(a, err);
            hi = p;
            alpha_bar.push(hi + lo);
        }
        let sqrt_alpha_bar = alpha_bar.iter().map(|a| a.sqrt()).collect();
        let sqrt_one_minus_alpha_bar = alpha_bar.iter().map(|a| (1.0 - a).sqrt()).collect();
        Ok(Self { betas, alpha_bar, sqrt_alpha_bar, sqrt_one_minus_alpha_bar })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    /// `beta_t`, `t` in `1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn sqrt_alpha_bar(&self, t: usize) -> f64 {
        self.sqrt_alpha_bar[t]
    }

    pub fn sqrt_one_minus_alpha_bar(&self, t: usize) -> f64 {
        self.sqrt_one_minus_alpha_bar[t]
    }

    pub(crate) fn check_t(&self, t: usize) -> Result<()> {
        if t > self.steps() {
            return Err(Error::param(format!("timestep {t} outside [0, {}]", self.steps())));
        }
        Ok(())
    }
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        Self::linear(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("default schedule is valid")
    }
}

/// `S` timesteps `round(T k / S)` for `k = S..1` (ties rounded up), deduplicated.
/// The sampler follows the last one with a step to `t = 0`.
pub fn make_subsequence(total: usize, sample_steps: usize) -> Result<Vec<usize>> {
    if sample_steps == 0 || sample_steps > total {
        return Err(Error::param(format!("sampling steps must be in [1, {total}], got {sample_steps}")));
    }
    let mut seq: Vec<usize> =
        (1..=sample_steps).rev().map(|k| (2 * total * k + sample_steps) / (2 * sample_steps)).collect();
    seq.dedup();
    Ok(seq)
}
