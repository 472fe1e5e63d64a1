//! Conditional diffusion: forward noising, the noise-prediction objective and
//! deterministic implicit sampling.
//!
//! ```text
//! x_t      = sqrt(ab_t) x_0 + sqrt(1 - ab_t) eps
//! x0_hat   = (x_t - sqrt(1 - ab_t) eps_pred) / sqrt(ab_t)
//! x_{prev} = sqrt(ab_prev) x0_hat + sqrt(1 - ab_prev) eps_pred
//! ```
//!
//! The conditioning (degraded image and illumination map) is handed to the
//! denoiser unchanged at every step.

mod schedule;

use rand::Rng;
use rand_distr::StandardNormal;

pub use schedule::{make_subsequence, NoiseSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_STEPS};

use crate::error::{Error, Result};
use crate::illumest::IlluminationMap;
use crate::image::ImageBuffer;

/// Placement of a (possibly cropped) denoiser input inside the full image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl Region {
    pub fn full(img: &ImageBuffer) -> Self {
        Self { row: 0, col: 0, height: img.height(), width: img.width() }
    }
}

/// Noise predictor `eps_theta(x_t, x_cond, x_illu, t)`.
pub trait Denoiser: Sync {
    /// Predicted noise, same shape as `x_t`. Must be deterministic.
    fn predict(&self, x_t: &ImageBuffer, cond: &ImageBuffer, illum: &IlluminationMap, t: usize) -> Result<ImageBuffer>;

    /// Like [`predict`](Self::predict) for inputs cropped at `region`. Only
    /// position-aware test denoisers need to override this.
    fn predict_region(
        &self,
        x_t: &ImageBuffer,
        cond: &ImageBuffer,
        illum: &IlluminationMap,
        t: usize,
        _region: Region,
    ) -> Result<ImageBuffer> {
        self.predict(x_t, cond, illum, t)
    }
}

/// Returns the exact noise that maps a known target `x0` onto the current
/// latent: `(x_t - sqrt(ab_t) x0) / sqrt(1 - ab_t)`.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    target: ImageBuffer,
    schedule: NoiseSchedule,
}

impl OracleDenoiser {
    pub fn new(target: ImageBuffer, schedule: NoiseSchedule) -> Self {
        Self { target, schedule }
    }
}

impl Denoiser for OracleDenoiser {
    fn predict(&self, x_t: &ImageBuffer, cond: &ImageBuffer, illum: &IlluminationMap, t: usize) -> Result<ImageBuffer> {
        self.predict_region(x_t, cond, illum, t, Region::full(x_t))
    }

    fn predict_region(
        &self,
        x_t: &ImageBuffer,
        _cond: &ImageBuffer,
        _illum: &IlluminationMap,
        t: usize,
        region: Region,
    ) -> Result<ImageBuffer> {
        if t == 0 || t > self.schedule.steps() {
            return Err(Error::param(format!("oracle queried at t = {t}")));
        }
        let x0 = self.target.crop(region.row, region.col, region.height, region.width)?;
        x0.check_same(x_t, "oracle target")?;
        let (sa, sb) = (self.schedule.sqrt_alpha_bar(t), self.schedule.sqrt_one_minus_alpha_bar(t));
        x_t.zip_map(&x0, |x, x0| (x - sa * x0) / sb)
    }
}

/// Always predicts zero noise.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroDenoiser;

impl Denoiser for ZeroDenoiser {
    fn predict(&self, x_t: &ImageBuffer, _: &ImageBuffer, _: &IlluminationMap, _: usize) -> Result<ImageBuffer> {
        let (h, w, c) = x_t.dims();
        Ok(ImageBuffer::zeros(h, w, c))
    }
}

/// `x_t = sqrt(ab_t) x0 + sqrt(1 - ab_t) eps`; `t = 0` returns `x0`.
pub fn forward_sample(x0: &ImageBuffer, t: usize, eps: &ImageBuffer, sched: &NoiseSchedule) -> Result<ImageBuffer> {
    sched.check_t(t)?;
    x0.check_same(eps, "forward noising")?;
    let (sa, sb) = (sched.sqrt_alpha_bar(t), sched.sqrt_one_minus_alpha_bar(t));
    x0.zip_map(eps, |x, e| sa * x + sb * e)
}

/// Mean squared error between `eps` and the prediction at `x_t`.
pub fn training_loss(
    denoiser: &dyn Denoiser,
    x0: &ImageBuffer,
    cond: &ImageBuffer,
    illum: &IlluminationMap,
    t: usize,
    eps: &ImageBuffer,
    sched: &NoiseSchedule,
) -> Result<f64> {
    if t == 0 {
        return Err(Error::param("training timestep must be >= 1"));
    }
    let x_t = forward_sample(x0, t, eps, sched)?;
    let pred = denoiser.predict(&x_t, cond, illum, t)?;
    pred.check_same(eps, "denoiser output")?;
    let sse: f64 = eps.data().iter().zip(pred.data()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(sse / eps.len() as f64)
}

/// One deterministic implicit step from `t` to `t_prev` (`t_prev = 0` lands on
/// the clean estimate, `t_prev = t` is the identity).
pub fn ddim_step(
    x_t: &ImageBuffer,
    eps_pred: &ImageBuffer,
    t: usize,
    t_prev: usize,
    sched: &NoiseSchedule,
) -> Result<ImageBuffer> {
    sched.check_t(t)?;
    if t_prev > t {
        return Err(Error::TimestepOrder { t, t_prev });
    }
    x_t.check_same(eps_pred, "ddim step")?;
    if t_prev == t {
        return Ok(x_t.clone());
    }
    let (sa, sb) = (sched.sqrt_alpha_bar(t), sched.sqrt_one_minus_alpha_bar(t));
    let x0_hat = x_t.zip_map(eps_pred, |x, e| (x - sb * e) / sa)?;
    if t_prev == 0 {
        return Ok(x0_hat);
    }
    let (pa, pb) = (sched.sqrt_alpha_bar(t_prev), sched.sqrt_one_minus_alpha_bar(t_prev));
    x0_hat.zip_map(eps_pred, |x0, e| pa * x0 + pb * e)
}

/// Standard-normal latent drawn row-major from `rng`.
pub fn sample_latent(rng: &mut impl Rng, height: usize, width: usize, channels: usize) -> ImageBuffer {
    let data = (0..height * width * channels).map(|_| rng.sample(StandardNormal)).collect();
    ImageBuffer::from_raw(height, width, channels, data)
}

/// Pairs each sampled timestep with its successor, ending at `t = 0`.
pub fn step_pairs(sched: &NoiseSchedule, sample_steps: usize) -> Result<Vec<(usize, usize)>> {
    let seq = make_subsequence(sched.steps(), sample_steps)?;
    Ok(seq.iter().enumerate().map(|(i, &t)| (t, seq.get(i + 1).copied().unwrap_or(0))).collect())
}

/// Whole-image reverse sampling. The latent has the shape of `cond`.
pub fn restore(
    cond: &ImageBuffer,
    illum: &IlluminationMap,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    sample_steps: usize,
    rng: &mut impl Rng,
) -> Result<ImageBuffer> {
    let (h, w, c) = cond.dims();
    let x_t = sample_latent(rng, h, w, c);
    restore_from(x_t, cond, illum, denoiser, sched, sample_steps).map(|x| x.clamp01())
}

/// Reverse loop from a given `x_T`; returns the final estimate unclamped.
pub fn restore_from(
    mut x: ImageBuffer,
    cond: &ImageBuffer,
    illum: &IlluminationMap,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    sample_steps: usize,
) -> Result<ImageBuffer> {
    cond.check_same(&x, "latent vs conditioning")?;
    let region = Region::full(&x);
    for (t, t_prev) in step_pairs(sched, sample_steps)? {
        let eps = denoiser.predict_region(&x, cond, illum, t, region)?;
        x = ddim_step(&x, &eps, t, t_prev, sched)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::illumest::init_illumination;
    use crate::seed;

    fn eps(h: usize, w: usize, c: usize, s: u64) -> ImageBuffer {
        sample_latent(&mut seed::rng(s), h, w, c)
    }

    #[test]
    fn forward_sample_cases() {
        let sched = NoiseSchedule::linear(2, 0.1, 0.2).unwrap();
        let x0 = ImageBuffer::filled(2, 2, 3, 0.5);
        let e = eps(2, 2, 3, 1);
        assert_eq!(forward_sample(&x0, 0, &e, &sched).unwrap(), x0);
        let zero = ImageBuffer::zeros(2, 2, 3);
        let out = forward_sample(&x0, 2, &zero, &sched).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5 * sched.sqrt_alpha_bar(2)));
        let ones = ImageBuffer::filled(2, 2, 3, 1.0);
        let out = forward_sample(&x0, 2, &ones, &sched).unwrap();
        let expect = 0.5 * 0.72f64.sqrt() + 0.28f64.sqrt();
        assert!(out.data().iter().all(|&v| (v - expect).abs() < 1e-15));
        assert!(forward_sample(&x0, 3, &ones, &sched).is_err());
    }

    #[test]
    fn loss_cases() {
        let sched = NoiseSchedule::default();
        let x0 = ImageBuffer::from_fn(4, 4, 3, |r, c, k| (r + c + k) as f64 / 9.0);
        let illum = init_illumination(&x0);
        let e = eps(4, 4, 3, 2);
        let t = 300;
        let x_t = forward_sample(&x0, t, &e, &sched).unwrap();
        // The oracle built on x0 returns the true eps.
        let oracle = OracleDenoiser::new(x0.clone(), sched.clone());
        let l = training_loss(&oracle, &x0, &x0, &illum, t, &e, &sched).unwrap();
        assert!(l < 1e-25);
        assert!(oracle.predict(&x_t, &x0, &illum, t).unwrap().max_abs_diff(&e) < 1e-12);

        struct Offset(OracleDenoiser);
        impl Denoiser for Offset {
            fn predict(&self, x: &ImageBuffer, c: &ImageBuffer, i: &IlluminationMap, t: usize) -> Result<ImageBuffer> {
                Ok(self.0.predict(x, c, i, t)?.map(|v| v + 0.1))
            }
        }
        let l = training_loss(&Offset(oracle), &x0, &x0, &illum, t, &e, &sched).unwrap();
        assert!((l - 0.01).abs() < 1e-12);
        assert!(training_loss(&ZeroDenoiser, &x0, &x0, &illum, 0, &e, &sched).is_err());
    }

    #[test]
    fn ddim_step_cases() {
        let sched = NoiseSchedule::default();
        let x0 = ImageBuffer::from_fn(3, 3, 3, |r, c, k| (r * 3 + c + k) as f64 / 12.0);
        let e = eps(3, 3, 3, 3);
        let x_t = forward_sample(&x0, 700, &e, &sched).unwrap();
        let back = ddim_step(&x_t, &e, 700, 0, &sched).unwrap();
        assert!(back.max_abs_diff(&x0) < 1e-12);
        assert_eq!(ddim_step(&x_t, &e, 700, 700, &sched).unwrap(), x_t);
        let zero = ImageBuffer::zeros(3, 3, 3);
        let scaled = ddim_step(&x_t, &zero, 700, 200, &sched).unwrap();
        let k = (sched.alpha_bar(200) / sched.alpha_bar(700)).sqrt();
        let expect = x_t.map(|v| v * k);
        assert!(scaled.max_abs_diff(&expect) < 1e-12);
        assert!(matches!(ddim_step(&x_t, &e, 200, 700, &sched), Err(Error::TimestepOrder { .. })));
        assert!(ddim_step(&x_t, &e, 1001, 0, &sched).is_err());
    }

    #[test]
    fn zero_denoiser_telescopes() {
        let sched = NoiseSchedule::default();
        let cond = ImageBuffer::filled(4, 4, 3, 0.2);
        let illum = init_illumination(&cond);
        let out = restore(&cond, &illum, &ZeroDenoiser, &sched, 10, &mut seed::rng(5)).unwrap();
        let x_t = sample_latent(&mut seed::rng(5), 4, 4, 3);
        let expect = x_t.map(|v| (v / sched.sqrt_alpha_bar(1000)).clamp(0.0, 1.0));
        assert!(out.max_abs_diff(&expect) < 1e-9);
    }

    #[test]
    fn restore_is_deterministic() {
        let sched = NoiseSchedule::default();
        let x0 = ImageBuffer::from_fn(6, 6, 3, |r, c, k| ((r + 2 * c + k) % 5) as f64 / 5.0);
        let illum = init_illumination(&x0);
        let oracle = OracleDenoiser::new(x0.clone(), sched.clone());
        let a = restore(&x0, &illum, &oracle, &sched, 5, &mut seed::rng(9)).unwrap();
        let b = restore(&x0, &illum, &oracle, &sched, 5, &mut seed::rng(9)).unwrap();
        assert_eq!(a, b);
        assert!(a.max_abs_diff(&x0) < 1e-10);
    }
}
