//! Seeded procedural sources for masks, streak layers and transmission maps.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{box_blur, ImageBuffer};
use crate::noise::{self, NoiseSpec};
use crate::seed;

/// Pseudo-depth used where the transmission field is fully uniform.
pub const UNIFORM_DEPTH: f64 = 0.5;

/// `T = exp(-beta * D)` with `D` a smooth pseudo-depth in `[0, 1]`, blended
/// toward the constant [`UNIFORM_DEPTH`] as `uniformity -> 1`.
pub fn gen_transmission(seed: u64, height: usize, width: usize, beta: f64, uniformity: f64) -> Result<ImageBuffer> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::param(format!("extinction beta must be > 0, got {beta}")));
    }
    if !(0.0..=1.0).contains(&uniformity) {
        return Err(Error::param(format!("haze uniformity must be in [0, 1], got {uniformity}")));
    }
    let spec = NoiseSpec { cell: (height.max(width) as f64 / 2.0).max(4.0), octaves: 4, persistence: 0.5 };
    let depth = noise::field(seed, height, width, &spec);
    Ok(depth.map(|d| {
        let d = (1.0 - uniformity) * d + uniformity * UNIFORM_DEPTH;
        (-beta * d).exp()
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreakGeometry {
    /// Fall direction in degrees from vertical; positive leans right.
    pub angle_deg: f64,
    /// Each streak's angle is drawn uniformly from `angle_deg ± jitter_deg`.
    pub jitter_deg: f64,
    pub length: f64,
    pub width: f64,
    /// Streak count per 1000 px² per layer.
    pub per_kilopixel: f64,
}

/// Distance from `(px, py)` to the segment `a -> b`.
fn segment_distance(px: f64, py: f64, ax: f64, ay: f64, bx: f64, by: f64) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 { (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0) } else { 0.0 };
    let (qx, qy) = (ax + t * dx, ay + t * dy);
    ((px - qx).powi(2) + (py - qy).powi(2)).sqrt()
}

/// Per-layer record of what was drawn, for the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreakLayerInfo {
    pub streaks: usize,
    pub mean_angle_deg: f64,
}

/// `layers` single-channel layers of anti-aliased line segments. Layer `i`
/// draws from its own sub-seed, so adding layers never changes earlier ones.
pub fn gen_rain_streaks(
    seed: u64,
    height: usize,
    width: usize,
    layers: usize,
    geometry: &StreakGeometry,
    intensity: f64,
) -> Result<(Vec<ImageBuffer>, Vec<StreakLayerInfo>)> {
    if layers == 0 {
        return Err(Error::param("streak layer count must be >= 1"));
    }
    if geometry.length < 1.0 || geometry.width < 1.0 {
        return Err(Error::param(format!(
            "degenerate streak geometry: length {} width {}",
            geometry.length, geometry.width
        )));
    }
    if !(0.0..=1.0).contains(&intensity) {
        return Err(Error::param(format!("streak intensity must be in [0, 1], got {intensity}")));
    }
    let count = ((height * width) as f64 / 1000.0 * geometry.per_kilopixel).round() as usize;
    let mut out = Vec::with_capacity(layers);
    let mut info = Vec::with_capacity(layers);
    for layer in 0..layers {
        let mut rng = seed::child_rng(seed, &[seed::STREAKS, layer as u64]);
        let mut buf = ImageBuffer::zeros(height, width, 1);
        let half_w = geometry.width / 2.0;
        let mut angle_sum = 0.0;
        for _ in 0..count {
            let angle = geometry.angle_deg
                + if geometry.jitter_deg > 0.0 {
                    rng.random_range(-geometry.jitter_deg..=geometry.jitter_deg)
                } else {
                    0.0
                };
            angle_sum += angle;
            let len = geometry.length * rng.random_range(0.8..1.2);
            let brightness = rng.random_range(0.6..=1.0);
            let cx = rng.random_range(-len / 2.0..width as f64 + len / 2.0);
            let cy = rng.random_range(-len / 2.0..height as f64 + len / 2.0);
            let (s, c) = angle.to_radians().sin_cos();
            let (hx, hy) = (s * len / 2.0, c * len / 2.0);
            let (ax, ay, bx, by) = (cx - hx, cy - hy, cx + hx, cy + hy);
            let pad = half_w + 1.0;
            let c0 = (ax.min(bx) - pad).floor().max(0.0) as usize;
            let c1 = (ax.max(bx) + pad).ceil().min(width as f64 - 1.0);
            let r0 = (ay.min(by) - pad).floor().max(0.0) as usize;
            let r1 = (ay.max(by) + pad).ceil().min(height as f64 - 1.0);
            if c1 < 0.0 || r1 < 0.0 {
                continue;
            }
            for r in r0..=r1 as usize {
                for col in c0..=c1 as usize {
                    let d = segment_distance(col as f64, r as f64, ax, ay, bx, by);
                    let coverage = (half_w + 0.5 - d).clamp(0.0, 1.0);
                    if coverage > 0.0 {
                        let v = intensity * brightness * coverage;
                        if v > buf.get(r, col, 0) {
                            buf.set(r, col, 0, v);
                        }
                    }
                }
            }
        }
        info.push(StreakLayerInfo {
            streaks: count,
            mean_angle_deg: if count > 0 { angle_sum / count as f64 } else { geometry.angle_deg },
        });
        out.push(buf);
    }
    Ok((out, info))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParticleKind {
    Snow,
    Raindrop,
}

struct Particle {
    x: f64,
    y: f64,
    rx: f64,
    ry: f64,
    tone: f64,
}

/// Number of particles whose Poisson union covers `density` of the plane,
/// given the mean particle area.
fn particle_count(area: f64, density: f64, mean_particle_area: f64) -> usize {
    let d = density.min(0.995);
    (-(1.0 - d).ln() * area / mean_particle_area).round() as usize
}

/// Occlusion mask `M` and its payload. Snow payload is the flake tone `S`;
/// raindrop payload is the additive residual `R = M * refracted(C)`, built by
/// sampling a blurred copy of `scene` through an inverting lens centred on
/// each drop.
pub fn gen_particle_field(
    seed: u64,
    scene: &ImageBuffer,
    density: f64,
    radius: (f64, f64),
    kind: ParticleKind,
) -> Result<(ImageBuffer, ImageBuffer, usize)> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::param(format!("particle density must be in (0, 1], got {density}")));
    }
    let (rmin, rmax) = radius;
    if !(rmin > 0.0 && rmin <= rmax) {
        return Err(Error::param(format!("empty radius range [{rmin}, {rmax}]")));
    }
    let (h, w, ch) = scene.dims();
    let mut rng = seed::child_rng(seed, &[seed::PARTICLES]);
    let elongation = match kind {
        ParticleKind::Snow => (1.0, 1.0),
        ParticleKind::Raindrop => (1.0, 1.4),
    };
    let mean_r2 = (rmin * rmin + rmin * rmax + rmax * rmax) / 3.0;
    let mean_area = std::f64::consts::PI * mean_r2 * (elongation.0 + elongation.1) / 2.0;
    // Centres range over the image grown by the largest extent, so coverage
    // is homogeneous up to the borders.
    let margin = rmax * elongation.1;
    let (ext_h, ext_w) = (h as f64 + 2.0 * margin, w as f64 + 2.0 * margin);
    let n = particle_count(ext_h * ext_w, density, mean_area);

    let particles: Vec<Particle> = (0..n)
        .map(|_| {
            let r = if rmax > rmin { rng.random_range(rmin..=rmax) } else { rmin };
            let stretch = if elongation.1 > elongation.0 { rng.random_range(elongation.0..=elongation.1) } else { 1.0 };
            Particle {
                x: rng.random_range(0.0..ext_w) - margin,
                y: rng.random_range(0.0..ext_h) - margin,
                rx: r,
                ry: r * stretch,
                tone: rng.random_range(0.75..=0.95),
            }
        })
        .collect();

    let mut mask = ImageBuffer::zeros(h, w, 1);
    let mut owner = vec![usize::MAX; h * w];
    for (i, p) in particles.iter().enumerate() {
        let r0 = (p.y - p.ry - 1.0).floor().max(0.0) as usize;
        let r1 = (p.y + p.ry + 1.0).ceil().min(h as f64 - 1.0);
        let c0 = (p.x - p.rx - 1.0).floor().max(0.0) as usize;
        let c1 = (p.x + p.rx + 1.0).ceil().min(w as f64 - 1.0);
        if r1 < 0.0 || c1 < 0.0 {
            continue;
        }
        let rmin_axis = p.rx.min(p.ry);
        for r in r0..=r1 as usize {
            for c in c0..=c1 as usize {
                let q = (((c as f64 - p.x) / p.rx).powi(2) + ((r as f64 - p.y) / p.ry).powi(2)).sqrt();
                // Signed distance to the rim, approximated along the short axis.
                let m = ((1.0 - q) * rmin_axis + 0.5).clamp(0.0, 1.0);
                if m > mask.get(r, c, 0) {
                    mask.set(r, c, 0, m);
                    owner[r * w + c] = i;
                }
            }
        }
    }

    let payload = match kind {
        ParticleKind::Snow => ImageBuffer::from_fn(h, w, ch, |r, c, _| match owner[r * w + c] {
            usize::MAX => 0.0,
            i => particles[i].tone,
        }),
        ParticleKind::Raindrop => {
            let blurred = box_blur(scene, 7)?;
            ImageBuffer::from_fn(h, w, ch, |r, c, k| match owner[r * w + c] {
                usize::MAX => 0.0,
                i => {
                    let p = &particles[i];
                    let sx = (p.x - 0.6 * (c as f64 - p.x)).round().clamp(0.0, w as f64 - 1.0);
                    let sy = (p.y - 0.6 * (r as f64 - p.y) - p.ry).round().clamp(0.0, h as f64 - 1.0);
                    mask.get(r, c, 0) * blurred.get(sy as usize, sx as usize, k)
                }
            })
        }
    };
    Ok((mask, payload, n))
}
