//! Shared inputs for the criterion benches.

use nightdiff::image::ImageBuffer;

/// Deterministic textured RGB scene.
pub fn scene(height: usize, width: usize) -> ImageBuffer {
    ImageBuffer::from_fn(height, width, 3, |r, c, k| {
        let (y, x) = (r as f64 / height as f64, c as f64 / width as f64);
        (0.45 + 0.3 * (6.0 * x + 2.0 * k as f64).sin() * (5.0 * y).cos()).clamp(0.0, 1.0)
    })
}
