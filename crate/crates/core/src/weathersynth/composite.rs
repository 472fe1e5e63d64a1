//! The four compositing models. All outputs are clamped to `[0, 1]`.

use crate::error::{Error, Result};
use crate::image::ImageBuffer;

fn check_unit(buf: &ImageBuffer, what: &str) -> Result<()> {
    if buf.min_value() < 0.0 || buf.max_value() > 1.0 {
        return Err(Error::param(format!("{what} must lie in [0, 1]")));
    }
    Ok(())
}

fn check_mask(scene: &ImageBuffer, mask: &ImageBuffer, what: &str) -> Result<()> {
    if mask.channels() != 1 {
        return Err(Error::shape(format!("{what} must be single-channel")));
    }
    scene.check_broadcast(mask)?;
    check_unit(mask, what)
}

fn light_for(a: &[f64], channels: usize) -> Result<Vec<f64>> {
    match a.len() {
        1 => Ok(vec![a[0]; channels]),
        n if n == channels => Ok(a.to_vec()),
        n => Err(Error::shape(format!("atmospheric light has {n} components for a {channels}-channel image"))),
    }
}

/// Raindrops: `I = (1 - M) * C + R`.
pub fn composite_raindrop(clean: &ImageBuffer, mask: &ImageBuffer, residual: &ImageBuffer) -> Result<ImageBuffer> {
    check_mask(clean, mask, "raindrop mask")?;
    clean.check_broadcast(residual)?;
    let (h, w, ch) = clean.dims();
    Ok(ImageBuffer::from_fn(h, w, ch, |r, c, k| {
        let m = mask.get(r, c, 0);
        ((1.0 - m) * clean.get(r, c, k) + residual.get_bcast(r, c, k)).clamp(0.0, 1.0)
    }))
}

/// Rain streaks seen through a scattering medium:
/// `I = T * (C + sum_i R_i) + (1 - T) * A`.
pub fn composite_rain(
    clean: &ImageBuffer,
    streaks: &[ImageBuffer],
    transmission: &ImageBuffer,
    light: &[f64],
) -> Result<ImageBuffer> {
    check_mask(clean, transmission, "transmission")?;
    for layer in streaks {
        clean.check_broadcast(layer)?;
        if layer.min_value() < 0.0 {
            return Err(Error::param("streak layers must be non-negative"));
        }
    }
    let (h, w, ch) = clean.dims();
    let a = light_for(light, ch)?;
    Ok(ImageBuffer::from_fn(h, w, ch, |r, c, k| {
        let t = transmission.get(r, c, 0);
        let mut radiance = clean.get(r, c, k);
        for layer in streaks {
            radiance += layer.get_bcast(r, c, k);
        }
        (t * radiance + (1.0 - t) * a[k]).clamp(0.0, 1.0)
    }))
}

/// Snow: `I = (1 - M) * C + M * S`.
pub fn composite_snow(clean: &ImageBuffer, mask: &ImageBuffer, snow: &ImageBuffer) -> Result<ImageBuffer> {
    check_mask(clean, mask, "snow mask")?;
    clean.check_broadcast(snow)?;
    let (h, w, ch) = clean.dims();
    Ok(ImageBuffer::from_fn(h, w, ch, |r, c, k| {
        let m = mask.get(r, c, 0);
        ((1.0 - m) * clean.get(r, c, k) + m * snow.get_bcast(r, c, k)).clamp(0.0, 1.0)
    }))
}

/// Fog and haze: `I = T * C + (1 - T) * A`.
pub fn composite_haze(clean: &ImageBuffer, transmission: &ImageBuffer, light: &[f64]) -> Result<ImageBuffer> {
    composite_rain(clean, &[], transmission, light)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random(rng: &mut impl Rng, h: usize, w: usize, ch: usize, hi: f64) -> ImageBuffer {
        let data = (0..h * w * ch).map(|_| rng.random_range(0.0..hi)).collect();
        ImageBuffer::new(h, w, ch, data).unwrap()
    }

    #[test]
    fn raindrop_degenerate_cases() {
        let mut rng = crate::seed::rng(1);
        let c = random(&mut rng, 4, 4, 3, 1.0);
        let zero_m = ImageBuffer::zeros(4, 4, 1);
        assert_eq!(composite_raindrop(&c, &zero_m, &ImageBuffer::zeros(4, 4, 3)).unwrap(), c);
        let full = ImageBuffer::filled(4, 4, 1, 1.0);
        let half = ImageBuffer::filled(4, 4, 3, 0.5);
        let out = composite_raindrop(&c, &full, &half).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn rain_degenerate_cases() {
        let mut rng = crate::seed::rng(2);
        let c = random(&mut rng, 4, 4, 3, 1.0);
        let t1 = ImageBuffer::filled(4, 4, 1, 1.0);
        assert_eq!(composite_rain(&c, &[], &t1, &[0.8]).unwrap(), c);
        let t0 = ImageBuffer::zeros(4, 4, 1);
        let streak = random(&mut rng, 4, 4, 1, 0.5);
        let out = composite_rain(&c, &[streak], &t0, &[0.1, 0.2, 0.3]).unwrap();
        for px in out.data().chunks(3) {
            assert_eq!(px, &[0.1, 0.2, 0.3]);
        }
    }

    #[test]
    fn snow_degenerate_cases() {
        let mut rng = crate::seed::rng(3);
        let c = random(&mut rng, 4, 4, 3, 1.0);
        let s = random(&mut rng, 4, 4, 3, 1.0);
        assert_eq!(composite_snow(&c, &ImageBuffer::zeros(4, 4, 1), &s).unwrap(), c);
        assert_eq!(composite_snow(&c, &ImageBuffer::filled(4, 4, 1, 1.0), &s).unwrap(), s);
    }

    #[test]
    fn haze_cases() {
        let mut rng = crate::seed::rng(4);
        let c = random(&mut rng, 4, 4, 3, 1.0);
        assert_eq!(composite_haze(&c, &ImageBuffer::filled(4, 4, 1, 1.0), &[0.8]).unwrap(), c);
        let out = composite_haze(&c, &ImageBuffer::zeros(4, 4, 1), &[0.8]).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.8));
        let c = ImageBuffer::filled(2, 2, 1, 0.2);
        let out = composite_haze(&c, &ImageBuffer::filled(2, 2, 1, 0.5), &[0.8]).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    }

    #[test]
    fn errors() {
        let c = ImageBuffer::zeros(4, 4, 3);
        let bad_m = ImageBuffer::filled(4, 4, 1, 1.5);
        assert!(composite_snow(&c, &bad_m, &c).is_err());
        assert!(composite_snow(&c, &ImageBuffer::zeros(3, 4, 1), &c).is_err());
        assert!(composite_raindrop(&c, &ImageBuffer::zeros(4, 4, 3), &c).is_err());
        assert!(composite_haze(&c, &ImageBuffer::zeros(4, 4, 1), &[0.1, 0.2]).is_err());
        let neg = ImageBuffer::filled(4, 4, 1, -0.1);
        assert!(composite_rain(&c, &[neg], &ImageBuffer::zeros(4, 4, 1), &[0.5]).is_err());
    }
}
