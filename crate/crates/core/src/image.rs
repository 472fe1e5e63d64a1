//! The `f64` raster every stage operates on, and its 8-bit PNG boundary.
//!
//! Samples are stored row-major, channel-interleaved (`HWC`). Values are
//! nominally in `[0, 1]`; intermediates may leave that range and are clamped
//! only when written out.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::shape(format!("empty raster {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::shape(format!("channels must be 1 or 3, got {channels}")));
        }
        if data.len() != height * width * channels {
            return Err(Error::shape(format!("data length {} != {height}x{width}x{channels}", data.len())));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::param(format!("non-finite sample {v}")));
        }
        Ok(Self { height, width, channels, data })
    }

    /// Builds a buffer from data already known to be well formed.
    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * channels);
        debug_assert!(data.iter().all(|v| v.is_finite()), "NaN/Inf in raster");
        Self { height, width, channels, data }
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Self::from_raw(height, width, channels, vec![value; height * width * channels])
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    /// Builds a buffer by evaluating `f(row, col, channel)` at every sample.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for r in 0..height {
            for c in 0..width {
                for ch in 0..channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        Self::from_raw(height, width, channels, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.index(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f64) {
        let i = self.index(row, col, ch);
        self.data[i] = value;
    }

    /// Value at `(row, col)` for channel `ch`, broadcasting single-channel rasters.
    #[inline]
    pub fn get_bcast(&self, row: usize, col: usize, ch: usize) -> f64 {
        if self.channels == 1 {
            self.get(row, col, 0)
        } else {
            self.get(row, col, ch)
        }
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.dims() == other.dims()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageBuffer {
        Self::from_raw(self.height, self.width, self.channels, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Element-wise binary operation; `other` may be single-channel and is then
    /// broadcast across `self`'s channels.
    pub fn zip_map(&self, other: &ImageBuffer, f: impl Fn(f64, f64) -> f64) -> Result<ImageBuffer> {
        self.check_broadcast(other)?;
        if other.channels == self.channels {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            Ok(Self::from_raw(self.height, self.width, self.channels, data))
        } else {
            let data = self
                .data
                .chunks_exact(self.channels)
                .zip(&other.data)
                .flat_map(|(px, &b)| px.iter().map(move |&a| (a, b)))
                .map(|(a, b)| f(a, b))
                .collect();
            Ok(Self::from_raw(self.height, self.width, self.channels, data))
        }
    }

    pub(crate) fn check_broadcast(&self, other: &ImageBuffer) -> Result<()> {
        if self.height != other.height || self.width != other.width {
            return Err(Error::shape(format!(
                "spatial dims {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        if other.channels != self.channels && other.channels != 1 {
            return Err(Error::shape(format!(
                "channels {} vs {} (only single-channel broadcast is allowed)",
                self.channels, other.channels
            )));
        }
        Ok(())
    }

    pub(crate) fn check_same(&self, other: &ImageBuffer, what: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::shape(format!("{what}: {:?} vs {:?}", self.dims(), other.dims())));
        }
        Ok(())
    }

    pub fn clamp01(&self) -> ImageBuffer {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn max_abs_diff(&self, other: &ImageBuffer) -> f64 {
        assert!(self.same_shape(other), "max_abs_diff on different shapes");
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Copies out a `height x width` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, height: usize, width: usize) -> Result<ImageBuffer> {
        if row + height > self.height || col + width > self.width || height == 0 || width == 0 {
            return Err(Error::shape(format!(
                "crop {height}x{width}@({row},{col}) outside {}x{}",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(height * width * self.channels);
        for r in row..row + height {
            let start = self.index(r, col, 0);
            data.extend_from_slice(&self.data[start..start + width * self.channels]);
        }
        Ok(Self::from_raw(height, width, self.channels, data))
    }

    /// Single-channel expanded to three identical channels; RGB returned as is.
    pub fn to_rgb(&self) -> ImageBuffer {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Self::from_raw(self.height, self.width, 3, data)
    }

    /// Per-pixel maximum over channels.
    pub fn channel_max(&self) -> ImageBuffer {
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect();
        Self::from_raw(self.height, self.width, 1, data)
    }

    /// Luma with fixed weights (0.299, 0.587, 0.114); single-channel input is copied.
    pub fn luma(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self.data.chunks_exact(3).map(|px| 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]).collect();
        Self::from_raw(self.height, self.width, 1, data)
    }
}

/// Element-wise product. `b` may be single-channel, in which case it scales
/// every channel of `a`.
pub fn hadamard(a: &ImageBuffer, b: &ImageBuffer) -> Result<ImageBuffer> {
    a.zip_map(b, |x, y| x * y)
}

/// Mean over a `window x window` neighbourhood, truncated at the borders
/// (each output averages only the in-bounds samples). Constants are preserved.
pub fn box_blur(img: &ImageBuffer, window: usize) -> Result<ImageBuffer> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(Error::param(format!("blur window must be odd, got {window}")));
    }
    let (h, w, ch) = img.dims();
    let half = window / 2;
    // Separable: horizontal pass, then vertical.
    let mut tmp = vec![0.0; img.len()];
    for r in 0..h {
        for c in 0..w {
            let lo = c.saturating_sub(half);
            let hi = (c + half).min(w - 1);
            let n = (hi - lo + 1) as f64;
            for k in 0..ch {
                let s: f64 = (lo..=hi).map(|cc| img.get(r, cc, k)).sum();
                tmp[(r * w + c) * ch + k] = s / n;
            }
        }
    }
    let mut out = vec![0.0; img.len()];
    for r in 0..h {
        let lo = r.saturating_sub(half);
        let hi = (r + half).min(h - 1);
        let n = (hi - lo + 1) as f64;
        for c in 0..w {
            for k in 0..ch {
                let s: f64 = (lo..=hi).map(|rr| tmp[(rr * w + c) * ch + k]).sum();
                out[(r * w + c) * ch + k] = s / n;
            }
        }
    }
    Ok(ImageBuffer::from_raw(h, w, ch, out))
}

/// 8-bit quantization used at every save: clamp, then round half up.
#[inline]
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(Error::MissingFile(path.to_path_buf())),
        Err(e) => return Err(Error::CorruptPng { path: path.to_path_buf(), reason: e.to_string() }),
    };
    let corrupt = |e: png::DecodingError| Error::CorruptPng { path: path.to_path_buf(), reason: e.to_string() };
    let unsupported = |reason: String| Error::UnsupportedPng { path: path.to_path_buf(), reason };

    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder.read_info().map_err(corrupt)?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(unsupported(format!("bit depth {:?}", info.bit_depth)));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(unsupported(format!("color type {other:?}"))),
    };
    if info.interlaced {
        return Err(unsupported("interlaced".into()));
    }
    if info.trns.is_some() {
        return Err(unsupported("transparency chunk".into()));
    }
    let (width, height) = (info.width as usize, info.height as usize);
    let size = reader.output_buffer_size().ok_or_else(|| unsupported("image too large".into()))?;
    let mut buf = vec![0u8; size];
    let frame = reader.next_frame(&mut buf).map_err(corrupt)?;
    let mut data = Vec::with_capacity(width * height * channels);
    for row in buf[..frame.line_size * height].chunks_exact(frame.line_size) {
        data.extend(row[..width * channels].iter().map(|&b| f64::from(b) / 255.0));
    }
    ImageBuffer::new(height, width, channels, data)
}

pub fn save_image(buf: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let write_err = |reason: String| Error::Write { path: path.to_path_buf(), reason };
    let file = File::create(path).map_err(|e| write_err(e.to_string()))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), buf.width as u32, buf.height as u32);
    encoder.set_color(if buf.channels == 1 { png::ColorType::Grayscale } else { png::ColorType::Rgb });
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().map_err(|e| write_err(e.to_string()))?;
    let bytes: Vec<u8> = buf.data.iter().map(|&v| quantize(v)).collect();
    writer.write_image_data(&bytes).map_err(|e| write_err(e.to_string()))?;
    writer.finish().map_err(|e| write_err(e.to_string()))
}
