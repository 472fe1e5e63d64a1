//! Dense building blocks with explicit backward passes.

use crate::image::ImageBuffer;

/// `H x W x C` activation, row-major, channel-interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub data: Vec<f64>,
}

impl FeatureMap {
    pub fn zeros(h: usize, w: usize, c: usize) -> Self {
        Self { h, w, c, data: vec![0.0; h * w * c] }
    }

    pub fn from_image(img: &ImageBuffer) -> Self {
        Self { h: img.height(), w: img.width(), c: img.channels(), data: img.data().to_vec() }
    }

    /// Stacks `a` and `b` along the channel axis.
    pub fn concat(a: &ImageBuffer, b: &ImageBuffer) -> Self {
        let (h, w, ca) = a.dims();
        let cb = b.channels();
        let mut data = Vec::with_capacity(h * w * (ca + cb));
        for (pa, pb) in a.data().chunks_exact(ca).zip(b.data().chunks_exact(cb)) {
            data.extend_from_slice(pa);
            data.extend_from_slice(pb);
        }
        Self { h, w, c: ca + cb, data }
    }

    pub fn pixels(&self) -> usize {
        self.h * self.w
    }

    pub fn add_assign(&mut self, other: &FeatureMap) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Adds `bias[c]` to every pixel.
    pub fn add_channel_bias(&mut self, bias: &[f64]) {
        for px in self.data.chunks_exact_mut(self.c) {
            for (v, b) in px.iter_mut().zip(bias) {
                *v += b;
            }
        }
    }

    /// Per-channel sum over pixels (the gradient of a broadcast channel bias).
    pub fn channel_sums(&self) -> Vec<f64> {
        let mut s = vec![0.0; self.c];
        for px in self.data.chunks_exact(self.c) {
            for (a, v) in s.iter_mut().zip(px) {
                *a += v;
            }
        }
        s
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: &FeatureMap) -> FeatureMap {
    FeatureMap { data: x.data.iter().map(|&v| v * sigmoid(v)).collect(), ..*x }
}

/// `dL/dx` given `dL/dy` for `y = silu(x)`.
pub fn silu_backward(x: &FeatureMap, dy: &FeatureMap) -> FeatureMap {
    let data = x
        .data
        .iter()
        .zip(&dy.data)
        .map(|(&v, &g)| {
            let s = sigmoid(v);
            g * s * (1.0 + v * (1.0 - s))
        })
        .collect();
    FeatureMap { data, ..*x }
}

/// 3x3 convolution with zero padding 1. Weights are laid out
/// `[c_out][ky][kx][c_in]`.
#[derive(Debug, Clone, Copy)]
pub struct Conv3 {
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
}

impl Conv3 {
    pub fn weight_len(&self) -> usize {
        self.c_out * 9 * self.c_in
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (h.div_ceil(self.stride), w.div_ceil(self.stride))
    }

    pub fn forward(&self, x: &FeatureMap, weight: &[f64], bias: &[f64]) -> FeatureMap {
        debug_assert_eq!(x.c, self.c_in);
        let (oh, ow) = self.out_dims(x.h, x.w);
        let ci = self.c_in;
        let mut out = FeatureMap::zeros(oh, ow, self.c_out);
        for oy in 0..oh {
            for ox in 0..ow {
                let o = &mut out.data[(oy * ow + ox) * self.c_out..(oy * ow + ox + 1) * self.c_out];
                o.copy_from_slice(bias);
                for ky in 0..3 {
                    let iy = (oy * self.stride + ky) as isize - 1;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (ox * self.stride + kx) as isize - 1;
                        if ix < 0 || ix >= x.w as isize {
                            continue;
                        }
                        let src = (iy as usize * x.w + ix as usize) * ci;
                        let inp = &x.data[src..src + ci];
                        for (co, ov) in o.iter_mut().enumerate() {
                            let wo = (co * 9 + ky * 3 + kx) * ci;
                            let wk = &weight[wo..wo + ci];
                            *ov += wk.iter().zip(inp).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates weight and bias gradients into `dw`/`db` and returns `dL/dx`
    /// when `want_input` is set.
    pub fn backward(
        &self,
        x: &FeatureMap,
        weight: &[f64],
        dy: &FeatureMap,
        dw: &mut [f64],
        db: &mut [f64],
        want_input: bool,
    ) -> Option<FeatureMap> {
        let ci = self.c_in;
        let (oh, ow) = (dy.h, dy.w);
        let mut dx = want_input.then(|| FeatureMap::zeros(x.h, x.w, ci));
        for oy in 0..oh {
            for ox in 0..ow {
                let g = &dy.data[(oy * ow + ox) * self.c_out..(oy * ow + ox + 1) * self.c_out];
                for (b, gv) in db.iter_mut().zip(g) {
                    *b += gv;
                }
                for ky in 0..3 {
                    let iy = (oy * self.stride + ky) as isize - 1;
                    if iy < 0 || iy >= x.h as isize {
                        continue;
                    }
                    for kx in 0..3 {
                        let ix = (ox * self.stride + kx) as isize - 1;
                        if ix < 0 || ix >= x.w as isize {
                            continue;
                        }
                        let src = (iy as usize * x.w + ix as usize) * ci;
                        let inp = &x.data[src..src + ci];
                        for (co, &gv) in g.iter().enumerate() {
                            if gv == 0.0 {
                                continue;
                            }
                            let wo = (co * 9 + ky * 3 + kx) * ci;
                            for (d, v) in dw[wo..wo + ci].iter_mut().zip(inp) {
                                *d += gv * v;
                            }
                            if let Some(dx) = dx.as_mut() {
                                for (d, w) in dx.data[src..src + ci].iter_mut().zip(&weight[wo..wo + ci]) {
                                    *d += gv * w;
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2(x: &FeatureMap) -> FeatureMap {
    let (h, w, c) = (x.h * 2, x.w * 2, x.c);
    let mut out = FeatureMap::zeros(h, w, c);
    for y in 0..h {
        for xx in 0..w {
            let src = ((y / 2) * x.w + xx / 2) * c;
            out.data[(y * w + xx) * c..(y * w + xx + 1) * c].copy_from_slice(&x.data[src..src + c]);
        }
    }
    out
}

pub fn upsample2_backward(dy: &FeatureMap) -> FeatureMap {
    let (h, w, c) = (dy.h / 2, dy.w / 2, dy.c);
    let mut dx = FeatureMap::zeros(h, w, c);
    for y in 0..dy.h {
        for xx in 0..dy.w {
            let dst = ((y / 2) * w + xx / 2) * c;
            for k in 0..c {
                dx.data[dst + k] += dy.data[(y * dy.w + xx) * c + k];
            }
        }
    }
    dx
}

/// Sinusoidal embedding of a timestep: `[sin(t f_i), cos(t f_i)]` with
/// `f_i = 10000^(-i / (dim / 2))`.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut e = vec![0.0; dim];
    for i in 0..half {
        let f = (-(10_000f64.ln()) * i as f64 / half as f64).exp();
        let (s, c) = (t as f64 * f).sin_cos();
        e[i] = s;
        e[half + i] = c;
    }
    e
}

/// `W e` for a `rows x e.len()` row-major matrix.
pub fn matvec(w: &[f64], e: &[f64]) -> Vec<f64> {
    w.chunks_exact(e.len()).map(|row| row.iter().zip(e).map(|(a, b)| a * b).sum()).collect()
}
