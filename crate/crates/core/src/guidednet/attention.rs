//! Cross-attention between illumination features and backbone features:
//!
//! ```text
//! Q = flatten(F) W_Q,  K = flatten(L) W_K,  V = flatten(L) W_V
//! out = flatten(L) + softmax(Q K^T / sqrt(d)) V
//! ```
//!
//! Projections are stored `C x d` row-major. The residual requires `d = C`
//! and equal token counts.

use super::layers::FeatureMap;
use crate::error::{Error, Result};

/// A `n x dim` token matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tokens {
    pub n: usize,
    pub dim: usize,
    pub data: Vec<f64>,
}

impl Tokens {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// Row-major flattening of an `H x W x C` map into `H*W` tokens of width `C`.
pub fn flatten_spatial(f: &FeatureMap) -> Tokens {
    Tokens { n: f.h * f.w, dim: f.c, data: f.data.clone() }
}

pub fn unflatten_spatial(t: &Tokens, h: usize, w: usize) -> Result<FeatureMap> {
    if h * w != t.n {
        return Err(Error::shape(format!("{} tokens cannot fill {h}x{w}", t.n)));
    }
    Ok(FeatureMap { h, w, c: t.dim, data: t.data.clone() })
}

/// `x (n x c) * w (c x d)`.
fn project(x: &Tokens, w: &[f64], d: usize) -> Tokens {
    let mut out = vec![0.0; x.n * d];
    for i in 0..x.n {
        let o = &mut out[i * d..(i + 1) * d];
        for (c, &xv) in x.row(i).iter().enumerate() {
            if xv == 0.0 {
                continue;
            }
            for (ov, wv) in o.iter_mut().zip(&w[c * d..(c + 1) * d]) {
                *ov += xv * wv;
            }
        }
    }
    Tokens { n: x.n, dim: d, data: out }
}

/// Accumulates `x^T dy` into `dw` and returns `dy w^T`.
fn project_backward(x: &Tokens, w: &[f64], dy: &Tokens, dw: &mut [f64]) -> Tokens {
    let d = dy.dim;
    let mut dx = vec![0.0; x.n * x.dim];
    for i in 0..x.n {
        let g = dy.row(i);
        for (c, &xv) in x.row(i).iter().enumerate() {
            let wr = &w[c * d..(c + 1) * d];
            let dwr = &mut dw[c * d..(c + 1) * d];
            let mut acc = 0.0;
            for e in 0..d {
                dwr[e] += xv * g[e];
                acc += g[e] * wr[e];
            }
            dx[i * x.dim + c] = acc;
        }
    }
    Tokens { n: x.n, dim: x.dim, data: dx }
}

/// Max-shifted softmax.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for r in row.iter_mut() {
        *r = (*r - max).exp();
        z += *r;
    }
    for r in row.iter_mut() {
        *r /= z;
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AttentionWeights<'a> {
    pub q: &'a [f64],
    pub k: &'a [f64],
    pub v: &'a [f64],
    pub d: usize,
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct AttentionCache {
    q: Tokens,
    k: Tokens,
    v: Tokens,
    /// Attention weights, `n_q x n_k`.
    probs: Vec<f64>,
}

impl AttentionCache {
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }
}

/// Attention output `softmax(Q K^T / sqrt(d)) V` (without the residual), with
/// the cache when `keep` is set. Rows are computed one at a time so inference
/// on large maps never materializes the full weight matrix.
pub fn attend(
    query_src: &Tokens,
    kv_src: &Tokens,
    weights: AttentionWeights<'_>,
    keep: bool,
) -> Result<(Tokens, Option<AttentionCache>)> {
    let d = weights.d;
    for (len, c) in [(weights.q.len(), query_src.dim), (weights.k.len(), kv_src.dim), (weights.v.len(), kv_src.dim)] {
        if len != c * d {
            return Err(Error::shape(format!("projection of length {len} for {c} x {d}")));
        }
    }
    let q = project(query_src, weights.q, d);
    let k = project(kv_src, weights.k, d);
    let v = project(kv_src, weights.v, d);
    let scale = 1.0 / (d as f64).sqrt();
    let nk = k.n;
    let mut out = vec![0.0; q.n * d];
    let mut probs = if keep { vec![0.0; q.n * nk] } else { Vec::new() };
    let mut row = vec![0.0; nk];
    for i in 0..q.n {
        let qi = q.row(i);
        for (j, r) in row.iter_mut().enumerate() {
            *r = scale * qi.iter().zip(k.row(j)).map(|(a, b)| a * b).sum::<f64>();
        }
        softmax_in_place(&mut row);
        let o = &mut out[i * d..(i + 1) * d];
        for (j, &p) in row.iter().enumerate() {
            for (ov, vv) in o.iter_mut().zip(v.row(j)) {
                *ov += p * vv;
            }
        }
        if keep {
            probs[i * nk..(i + 1) * nk].copy_from_slice(&row);
        }
    }
    let cache = keep.then_some(AttentionCache { q, k, v, probs });
    Ok((Tokens { n: query_src.n, dim: d, data: out }, cache))
}

/// `L + attend(F, L)`, shaped like `F`'s tokens.
pub fn cross_attention(f_tokens: &Tokens, l_tokens: &Tokens, weights: AttentionWeights<'_>) -> Result<Tokens> {
    if f_tokens.n != l_tokens.n || f_tokens.dim != l_tokens.dim || weights.d != l_tokens.dim {
        return Err(Error::shape("residual cross-attention needs matching token grids and d = C"));
    }
    let (mut o, _) = attend(f_tokens, l_tokens, weights, false)?;
    for (a, b) in o.data.iter_mut().zip(&l_tokens.data) {
        *a += b;
    }
    Ok(o)
}

/// Gradients for `attend`.
pub struct AttentionGrads {
    pub d_query_src: Tokens,
    pub d_kv_src: Tokens,
}

#[allow(clippy::too_many_arguments)]
pub fn attend_backward(
    query_src: &Tokens,
    kv_src: &Tokens,
    weights: AttentionWeights<'_>,
    cache: &AttentionCache,
    d_out: &Tokens,
    dwq: &mut [f64],
    dwk: &mut [f64],
    dwv: &mut [f64],
) -> AttentionGrads {
    let d = weights.d;
    let (nq, nk) = (cache.q.n, cache.k.n);
    let scale = 1.0 / (d as f64).sqrt();
    let mut dq = vec![0.0; nq * d];
    let mut dk = vec![0.0; nk * d];
    let mut dv = vec![0.0; nk * d];
    let mut ds = vec![0.0; nk];
    for i in 0..nq {
        let p = &cache.probs[i * nk..(i + 1) * nk];
        let g = d_out.row(i);
        let mut dot = 0.0;
        for j in 0..nk {
            let vj = cache.v.row(j);
            let dp: f64 = g.iter().zip(vj).map(|(a, b)| a * b).sum();
            ds[j] = dp;
            dot += p[j] * dp;
            let pj = p[j];
            for (dvv, gv) in dv[j * d..(j + 1) * d].iter_mut().zip(g) {
                *dvv += pj * gv;
            }
        }
        let qi = cache.q.row(i);
        let dqi = &mut dq[i * d..(i + 1) * d];
        for j in 0..nk {
            let s = scale * p[j] * (ds[j] - dot);
            if s == 0.0 {
                continue;
            }
            let kj = cache.k.row(j);
            for e in 0..d {
                dqi[e] += s * kj[e];
                dk[j * d + e] += s * qi[e];
            }
        }
    }
    let dq = Tokens { n: nq, dim: d, data: dq };
    let dk = Tokens { n: nk, dim: d, data: dk };
    let dv = Tokens { n: nk, dim: d, data: dv };
    let d_query_src = project_backward(query_src, weights.q, &dq, dwq);
    let mut d_kv_src = project_backward(kv_src, weights.k, &dk, dwk);
    let from_v = project_backward(kv_src, weights.v, &dv, dwv);
    for (a, b) in d_kv_src.data.iter_mut().zip(&from_v.data) {
        *a += b;
    }
    AttentionGrads { d_query_src, d_kv_src }
}
