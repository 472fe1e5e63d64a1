//! Patch-based restoration with overlapping tiles.
//!
//! A single full-image latent is kept. At every reverse step each tile's crop
//! of (latent, conditioning, illumination) goes through the denoiser, the
//! per-tile noise predictions are summed into a full-size buffer, divided by
//! the per-pixel coverage count, and one DDIM step updates the latent.

pub mod probe;

use rand::Rng;
use rayon::prelude::*;

use crate::diffcore::{ddim_step, sample_latent, step_pairs, Denoiser, NoiseSchedule, Region};
use crate::error::{Error, Result};
use crate::illumest::IlluminationMap;
use crate::image::ImageBuffer;

pub const DEFAULT_PATCH: usize = 64;
pub const DEFAULT_GRID_STEP: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TilePlan {
    patch: usize,
    step: usize,
    height: usize,
    width: usize,
    row_anchors: Vec<usize>,
    col_anchors: Vec<usize>,
    count: Vec<u32>,
}

/// `0, s, 2s, ...` up to `len - p`, plus a final anchor clamped to `len - p`.
fn axis_anchors(len: usize, patch: usize, step: usize) -> Vec<usize> {
    let last = len - patch;
    let mut v: Vec<usize> = (0..=last).step_by(step).collect();
    if *v.last().unwrap() != last {
        v.push(last);
    }
    v
}

pub fn plan_tiles(height: usize, width: usize, patch: usize, step: usize) -> Result<TilePlan> {
    if patch == 0 || patch > height || patch > width {
        return Err(Error::param(format!("patch size {patch} does not fit a {height}x{width} image")));
    }
    if step == 0 || step > patch {
        return Err(Error::param(format!("grid step must be in [1, {patch}], got {step}")));
    }
    let row_anchors = axis_anchors(height, patch, step);
    let col_anchors = axis_anchors(width, patch, step);
    let mut count = vec![0u32; height * width];
    for &r in &row_anchors {
        for &c in &col_anchors {
            for rr in r..r + patch {
                for v in &mut count[rr * width + c..rr * width + c + patch] {
                    *v += 1;
                }
            }
        }
    }
    Ok(TilePlan { patch, step, height, width, row_anchors, col_anchors, count })
}

impl TilePlan {
    pub fn patch(&self) -> usize {
        self.patch
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Top-left anchors in row-major order.
    pub fn tiles(&self) -> Vec<(usize, usize)> {
        self.row_anchors.iter().flat_map(|&r| self.col_anchors.iter().map(move |&c| (r, c))).collect()
    }

    pub fn len(&self) -> usize {
        self.row_anchors.len() * self.col_anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn count(&self) -> &[u32] {
        &self.count
    }

    pub fn count_at(&self, row: usize, col: usize) -> u32 {
        self.count[row * self.width + col]
    }

    pub fn region(&self, (row, col): (usize, usize)) -> Region {
        Region { row, col, height: self.patch, width: self.patch }
    }

    /// Interior boundary lines: the pixel index just after each tile edge,
    /// for rows and columns.
    pub fn boundary_lines(&self) -> (Vec<usize>, Vec<usize>) {
        let lines = |anchors: &[usize], len: usize| {
            let mut v: Vec<usize> =
                anchors.iter().flat_map(|&a| [a, a + self.patch]).filter(|&x| x > 0 && x < len).collect();
            v.sort_unstable();
            v.dedup();
            v
        };
        (lines(&self.row_anchors, self.height), lines(&self.col_anchors, self.width))
    }
}

/// Sums each tile's prediction at its location and divides by coverage.
pub fn accumulate_and_average(plan: &TilePlan, predictions: &[ImageBuffer]) -> Result<ImageBuffer> {
    let tiles = plan.tiles();
    if predictions.len() != tiles.len() {
        return Err(Error::shape(format!("{} predictions for {} tiles", predictions.len(), tiles.len())));
    }
    let channels = predictions.first().map_or(1, ImageBuffer::channels);
    let p = plan.patch;
    let mut sum = vec![0.0; plan.height * plan.width * channels];
    for (&(r, c), pred) in tiles.iter().zip(predictions) {
        if pred.dims() != (p, p, channels) {
            return Err(Error::shape(format!("tile prediction {:?}, expected {:?}", pred.dims(), (p, p, channels))));
        }
        for dr in 0..p {
            let dst = ((r + dr) * plan.width + c) * channels;
            let src = dr * p * channels;
            for (d, s) in sum[dst..dst + p * channels].iter_mut().zip(&pred.data()[src..src + p * channels]) {
                *d += s;
            }
        }
    }
    for (px, &n) in sum.chunks_exact_mut(channels).zip(&plan.count) {
        let n = f64::from(n);
        for v in px {
            *v /= n;
        }
    }
    Ok(ImageBuffer::from_raw(plan.height, plan.width, channels, sum))
}

/// Averaged noise prediction over all tiles of `plan` for the latent `x`.
pub fn tiled_prediction(
    plan: &TilePlan,
    x: &ImageBuffer,
    cond: &ImageBuffer,
    illum: &IlluminationMap,
    denoiser: &dyn Denoiser,
    t: usize,
) -> Result<ImageBuffer> {
    let p = plan.patch;
    let predictions = plan
        .tiles()
        .par_iter()
        .map(|&(r, c)| {
            let x_tile = x.crop(r, c, p, p)?;
            let cond_tile = cond.crop(r, c, p, p)?;
            let illum_tile = IlluminationMap::from_buffer(illum.as_image().crop(r, c, p, p)?)?;
            denoiser.predict_region(&x_tile, &cond_tile, &illum_tile, t, plan.region((r, c)))
        })
        .collect::<Result<Vec<_>>>()?;
    accumulate_and_average(plan, &predictions)
}

#[allow(clippy::too_many_arguments)]
pub fn tiled_restore(
    cond: &ImageBuffer,
    illum: &IlluminationMap,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    sample_steps: usize,
    patch: usize,
    step: usize,
    rng: &mut impl Rng,
) -> Result<ImageBuffer> {
    let (h, w, c) = cond.dims();
    let plan = plan_tiles(h, w, patch, step)?;
    let x = sample_latent(rng, h, w, c);
    tiled_restore_from(x, cond, illum, denoiser, sched, sample_steps, &plan).map(|x| x.clamp01())
}

/// Tiled reverse loop from a given `x_T`; returns the final estimate unclamped.
pub fn tiled_restore_from(
    mut x: ImageBuffer,
    cond: &ImageBuffer,
    illum: &IlluminationMap,
    denoiser: &dyn Denoiser,
    sched: &NoiseSchedule,
    sample_steps: usize,
    plan: &TilePlan,
) -> Result<ImageBuffer> {
    cond.check_same(&x, "latent vs conditioning")?;
    if (x.height(), x.width()) != plan.dims() {
        return Err(Error::shape("tile plan does not match the image"));
    }
    if (illum.as_image().height(), illum.as_image().width()) != plan.dims() {
        return Err(Error::shape("illumination map does not match the image"));
    }
    for (t, t_prev) in step_pairs(sched, sample_steps)? {
        let eps = tiled_prediction(plan, &x, cond, illum, denoiser, t)?;
        x = ddim_step(&x, &eps, t, t_prev, sched)?;
    }
    Ok(x)
}

/// Mean absolute neighbour difference across the plan's interior tile
/// boundaries, minus the same mean over all other neighbour pairs, floored at 0.
#[allow(clippy::needless_range_loop)]
pub fn seam_score(img: &ImageBuffer, plan: &TilePlan) -> f64 {
    let (h, w, ch) = img.dims();
    let (row_lines, col_lines) = plan.boundary_lines();
    let mut is_row_line = vec![false; h];
    row_lines.iter().filter(|&&r| r < h).for_each(|&r| is_row_line[r] = true);
    let mut is_col_line = vec![false; w];
    col_lines.iter().filter(|&&c| c < w).for_each(|&c| is_col_line[c] = true);

    let (mut b_sum, mut b_n, mut n_sum, mut n_n) = (0.0, 0usize, 0.0, 0usize);
    let mut add = |on_line: bool, d: f64| {
        if on_line {
            b_sum += d;
            b_n += 1;
        } else {
            n_sum += d;
            n_n += 1;
        }
    };
    for r in 0..h {
        for c in 0..w {
            for k in 0..ch {
                if c > 0 {
                    add(is_col_line[c], (img.get(r, c, k) - img.get(r, c - 1, k)).abs());
                }
                if r > 0 {
                    add(is_row_line[r], (img.get(r, c, k) - img.get(r - 1, c, k)).abs());
                }
            }
        }
    }
    if b_n == 0 || n_n == 0 {
        return 0.0;
    }
    (b_sum / b_n as f64 - n_sum / n_n as f64).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;

    fn brute_count(plan: &TilePlan) -> Vec<u32> {
        let (h, w) = plan.dims();
        let mut v = vec![0u32; h * w];
        for (r0, c0) in plan.tiles() {
            for r in 0..h {
                for c in 0..w {
                    if r >= r0 && r < r0 + plan.patch() && c >= c0 && c < c0 + plan.patch() {
                        v[r * w + c] += 1;
                    }
                }
            }
        }
        v
    }

    #[test]
    fn single_tile_and_partition() {
        let p = plan_tiles(32, 32, 32, 5).unwrap();
        assert_eq!(p.tiles(), vec![(0, 0)]);
        assert!(p.count().iter().all(|&c| c == 1));
        let p = plan_tiles(48, 32, 16, 16).unwrap();
        assert_eq!(p.len(), 6);
        assert!(p.count().iter().all(|&c| c == 1));
    }

    #[test]
    fn overlapping_plan_96() {
        let p = plan_tiles(96, 96, 64, 16).unwrap();
        assert_eq!(p.len(), 9);
        assert_eq!(p.tiles()[..3], [(0, 0), (0, 16), (0, 32)]);
        assert_eq!(p.count_at(48, 48), 9);
        assert_eq!(p.count_at(0, 0), 1);
        assert_eq!(p.count(), brute_count(&p).as_slice());
    }

    #[test]
    fn edge_anchors_clamp_inward() {
        let p = plan_tiles(70, 100, 64, 16).unwrap();
        assert_eq!(p.row_anchors, vec![0, 6]);
        assert_eq!(p.col_anchors, vec![0, 16, 32, 36]);
        assert_eq!(p.count(), brute_count(&p).as_slice());
        assert!(plan_tiles(50, 100, 64, 16).is_err());
        assert!(plan_tiles(100, 100, 64, 0).is_err());
        assert!(plan_tiles(100, 100, 64, 65).is_err());
    }

    #[test]
    fn randomized_coverage_sweep() {
        use rand::Rng;
        let mut rng = seed::rng(21);
        for _ in 0..200 {
            let p = rng.random_range(1..=24);
            let h = rng.random_range(p..=60);
            let w = rng.random_range(p..=60);
            let s = rng.random_range(1..=p);
            let plan = plan_tiles(h, w, p, s).unwrap();
            assert!(plan.count().iter().all(|&c| c >= 1));
            assert_eq!(plan.count(), brute_count(&plan).as_slice());
            for (r, c) in plan.tiles() {
                assert!(r + p <= h && c + p <= w);
            }
        }
    }

    #[test]
    fn averaging_cases() {
        let plan = plan_tiles(40, 40, 16, 6).unwrap();
        let preds = vec![ImageBuffer::filled(16, 16, 3, 0.37); plan.len()];
        let avg = accumulate_and_average(&plan, &preds).unwrap();
        assert!(avg.data().iter().all(|&v| (v - 0.37).abs() < 1e-15));

        let plan = plan_tiles(16, 16, 16, 4).unwrap();
        let one = ImageBuffer::from_fn(16, 16, 1, |r, c, _| (r * 16 + c) as f64);
        assert_eq!(accumulate_and_average(&plan, std::slice::from_ref(&one)).unwrap(), one);

        assert!(accumulate_and_average(&plan, &[]).is_err());
        assert!(accumulate_and_average(&plan, &[ImageBuffer::zeros(8, 8, 1)]).is_err());
    }

    #[test]
    fn seam_score_cases() {
        let plan = plan_tiles(128, 128, 64, 64).unwrap();
        assert_eq!(seam_score(&ImageBuffer::filled(128, 128, 3, 0.4), &plan), 0.0);
        let ramp = ImageBuffer::from_fn(128, 128, 3, |r, c, k| (r + c + k) as f64 / 300.0);
        assert!(seam_score(&ramp, &plan).abs() < 1e-6);
        for h in [0.1, 0.3] {
            let step = ImageBuffer::from_fn(128, 128, 1, |_, c, _| if c >= 64 { h } else { 0.0 });
            // Boundary pairs: 128 crossing the step (|d| = h) and 128 along the
            // horizontal line (d = 0); every other pair is flat.
            assert!((seam_score(&step, &plan) - h / 2.0).abs() < 1e-12);
        }
    }
}
