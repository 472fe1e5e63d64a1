use std::ops::Range;

use rand::Rng;
use rand_distr::StandardNormal;

use super::attention::{attend, attend_backward, flatten_spatial, AttentionCache, AttentionWeights, Tokens};
use super::layers::{matvec, silu, silu_backward, time_embedding, upsample2, upsample2_backward, Conv3, FeatureMap};
use crate::diffcore::Denoiser;
use crate::error::{Error, Result};
use crate::illumest::IlluminationMap;
use crate::image::ImageBuffer;
use crate::seed;

pub const LATENT_CHANNELS: usize = 3;
pub const COND_CHANNELS: usize = 3;

/// Widths of the two-scale encoder/decoder. `base` channels at full
/// resolution, `deep` at half resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Architecture {
    pub base: usize,
    pub deep: usize,
    pub time_dim: usize,
}

impl Default for Architecture {
    fn default() -> Self {
        Self { base: 8, deep: 8, time_dim: 8 }
    }
}

/// Offsets of every parameter block inside the flat vector.
#[derive(Debug, Clone)]
pub struct Layout {
    pub conv_in_w: Range<usize>,
    pub conv_in_b: Range<usize>,
    pub time0: Range<usize>,
    pub enc0_w: Range<usize>,
    pub enc0_b: Range<usize>,
    pub q0: Range<usize>,
    pub k0: Range<usize>,
    pub v0: Range<usize>,
    pub down_w: Range<usize>,
    pub down_b: Range<usize>,
    pub time1: Range<usize>,
    pub enc1_w: Range<usize>,
    pub enc1_b: Range<usize>,
    pub q1: Range<usize>,
    pub k1: Range<usize>,
    pub v1: Range<usize>,
    pub up1_w: Range<usize>,
    pub up1_b: Range<usize>,
    pub up0_w: Range<usize>,
    pub up0_b: Range<usize>,
    pub out_w: Range<usize>,
    pub out_b: Range<usize>,
    pub total: usize,
}

impl Layout {
    /// Blocks that only feed the illumination pathway.
    pub fn illumination_blocks(&self) -> [Range<usize>; 10] {
        [
            self.enc0_w.clone(),
            self.enc0_b.clone(),
            self.q0.clone(),
            self.k0.clone(),
            self.v0.clone(),
            self.enc1_w.clone(),
            self.enc1_b.clone(),
            self.q1.clone(),
            self.k1.clone(),
            self.v1.clone(),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
struct Convs {
    conv_in: Conv3,
    enc0: Conv3,
    down: Conv3,
    enc1: Conv3,
    up1: Conv3,
    up0: Conv3,
    out: Conv3,
}

impl Architecture {
    fn convs(&self) -> Convs {
        let (c0, c1) = (self.base, self.deep);
        Convs {
            conv_in: Conv3 { c_in: LATENT_CHANNELS + COND_CHANNELS, c_out: c0, stride: 1 },
            enc0: Conv3 { c_in: 1, c_out: c0, stride: 1 },
            down: Conv3 { c_in: c0, c_out: c1, stride: 2 },
            enc1: Conv3 { c_in: c0, c_out: c1, stride: 2 },
            up1: Conv3 { c_in: c1, c_out: c0, stride: 1 },
            up0: Conv3 { c_in: c0, c_out: c0, stride: 1 },
            out: Conv3 { c_in: c0, c_out: LATENT_CHANNELS, stride: 1 },
        }
    }

    pub fn layout(&self) -> Layout {
        let cv = self.convs();
        let (c0, c1, te) = (self.base, self.deep, self.time_dim);
        let mut at = 0;
        let mut take = |n: usize| {
            let r = at..at + n;
            at += n;
            r
        };
        let conv_in_w = take(cv.conv_in.weight_len());
        let conv_in_b = take(c0);
        let time0 = take(c0 * te);
        let enc0_w = take(cv.enc0.weight_len());
        let enc0_b = take(c0);
        let q0 = take(c0 * c0);
        let k0 = take(c0 * c0);
        let v0 = take(c0 * c0);
        let down_w = take(cv.down.weight_len());
        let down_b = take(c1);
        let time1 = take(c1 * te);
        let enc1_w = take(cv.enc1.weight_len());
        let enc1_b = take(c1);
        let q1 = take(c1 * c1);
        let k1 = take(c1 * c1);
        let v1 = take(c1 * c1);
        let up1_w = take(cv.up1.weight_len());
        let up1_b = take(c0);
        let up0_w = take(cv.up0.weight_len());
        let up0_b = take(c0);
        let out_w = take(cv.out.weight_len());
        let out_b = take(LATENT_CHANNELS);
        Layout {
            conv_in_w,
            conv_in_b,
            time0,
            enc0_w,
            enc0_b,
            q0,
            k0,
            v0,
            down_w,
            down_b,
            time1,
            enc1_w,
            enc1_b,
            q1,
            k1,
            v1,
            up1_w,
            up1_b,
            up0_w,
            up0_b,
            out_w,
            out_b,
            total: at,
        }
    }

    pub fn param_count(&self) -> usize {
        self.layout().total
    }

    pub fn validate(&self) -> Result<()> {
        if self.base == 0 || self.deep == 0 || self.time_dim == 0 || !self.time_dim.is_multiple_of(2) {
            return Err(Error::param(format!("invalid architecture {self:?}")));
        }
        Ok(())
    }
}

/// The illumination-guided noise predictor. Parameters live in one flat
/// vector addressed through [`Layout`].
#[derive(Debug, Clone, PartialEq)]
pub struct TinyDenoiser {
    arch: Architecture,
    theta: Vec<f64>,
    illum_injection: bool,
}

/// Forward intermediates needed by the backward pass.
struct Trace {
    x_in: FeatureMap,
    illum: FeatureMap,
    temb: Vec<f64>,
    a0: FeatureMap,
    inj0: Option<Injection>,
    g0: FeatureMap,
    a1: FeatureMap,
    inj1: Option<Injection>,
    u: FeatureMap,
    p2: FeatureMap,
    h2: FeatureMap,
    p3: FeatureMap,
    h3: FeatureMap,
}

struct Injection {
    /// Encoder pre-activation and activation.
    e: FeatureMap,
    f: FeatureMap,
    f_tok: Tokens,
    l_tok: Tokens,
    cache: Option<AttentionCache>,
}

impl TinyDenoiser {
    /// Seeded initialization: conv and projection weights are Gaussian with
    /// standard deviation `1/sqrt(fan_in)`, the output conv is scaled down by
    /// ten and biases start at zero.
    pub fn init(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let lay = arch.layout();
        let mut rng = seed::child_rng(seed, &[seed::INIT]);
        let mut theta = vec![0.0; lay.total];
        let mut fill = |r: &Range<usize>, fan_in: usize, scale: f64| {
            let std = scale / (fan_in as f64).sqrt();
            for v in &mut theta[r.clone()] {
                *v = std * rng.sample::<f64, _>(StandardNormal);
            }
        };
        let (c0, c1, te) = (arch.base, arch.deep, arch.time_dim);
        fill(&lay.conv_in_w, 9 * (LATENT_CHANNELS + COND_CHANNELS), 1.0);
        fill(&lay.time0, te, 1.0);
        fill(&lay.enc0_w, 9, 1.0);
        for r in [&lay.q0, &lay.k0, &lay.v0] {
            fill(r, c0, 1.0);
        }
        fill(&lay.down_w, 9 * c0, 1.0);
        fill(&lay.time1, te, 1.0);
        fill(&lay.enc1_w, 9 * c0, 1.0);
        for r in [&lay.q1, &lay.k1, &lay.v1] {
            fill(r, c1, 1.0);
        }
        fill(&lay.up1_w, 9 * c1, 1.0);
        fill(&lay.up0_w, 9 * c0, 1.0);
        fill(&lay.out_w, 9 * c0, 0.1);
        Ok(Self { arch, theta, illum_injection: true })
    }

    pub fn from_parts(arch: Architecture, theta: Vec<f64>, illum_injection: bool) -> Result<Self> {
        arch.validate()?;
        if theta.len() != arch.param_count() {
            return Err(Error::Model(format!("expected {} parameters, got {}", arch.param_count(), theta.len())));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Model("non-finite parameter".into()));
        }
        Ok(Self { arch, theta, illum_injection })
    }

    pub fn architecture(&self) -> Architecture {
        self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.theta
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    pub fn illum_injection(&self) -> bool {
        self.illum_injection
    }

    /// Ablation switch: with injection off the illumination pathway is
    /// skipped entirely.
    pub fn set_illum_injection(&mut self, on: bool) {
        self.illum_injection = on;
    }

    fn block(&self, r: &Range<usize>) -> &[f64] {
        &self.theta[r.clone()]
    }

    fn check_inputs(&self, x_t: &ImageBuffer, cond: &ImageBuffer, illum: &ImageBuffer) -> Result<()> {
        let (h, w, c) = x_t.dims();
        if c != LATENT_CHANNELS || cond.dims() != (h, w, COND_CHANNELS) || illum.dims() != (h, w, 1) {
            return Err(Error::shape(format!(
                "denoiser expects {h}x{w}x{LATENT_CHANNELS} latent, matching {COND_CHANNELS}-channel condition and 1-channel illumination; got {:?}, {:?}, {:?}",
                x_t.dims(),
                cond.dims(),
                illum.dims()
            )));
        }
        check_even(h, w)
    }

    /// Illumination pyramid `[F_0, F_1]`: a stride-1 level at full resolution
    /// and a stride-2 level at half resolution, each conv followed by SiLU.
    pub fn illum_encoder(&self, illum: &IlluminationMap) -> Result<[FeatureMap; 2]> {
        let img = illum.as_image();
        check_even(img.height(), img.width())?;
        let lay = self.arch.layout();
        let cv = self.arch.convs();
        let f0 = silu(&cv.enc0.forward(&FeatureMap::from_image(img), self.block(&lay.enc0_w), self.block(&lay.enc0_b)));
        let f1 = silu(&cv.enc1.forward(&f0, self.block(&lay.enc1_w), self.block(&lay.enc1_b)));
        Ok([f0, f1])
    }

    #[allow(clippy::too_many_arguments)]
    fn inject(
        &self,
        src: &FeatureMap,
        conv: Conv3,
        w: &Range<usize>,
        b: &Range<usize>,
        weights: AttentionWeights<'_>,
        l: &FeatureMap,
        keep: bool,
    ) -> Result<(FeatureMap, Injection)> {
        let e = conv.forward(src, self.block(w), self.block(b));
        let f = silu(&e);
        let f_tok = flatten_spatial(&f);
        let l_tok = flatten_spatial(l);
        let (o, cache) = attend(&f_tok, &l_tok, weights, keep)?;
        let mut g = FeatureMap { h: l.h, w: l.w, c: l.c, data: o.data };
        g.add_assign(l);
        let inj = Injection { e, f, f_tok, l_tok, cache };
        Ok((g, inj))
    }

    fn forward(
        &self,
        x_t: &ImageBuffer,
        cond: &ImageBuffer,
        illum: &ImageBuffer,
        t: usize,
        keep: bool,
    ) -> Result<(FeatureMap, Option<Trace>)> {
        self.check_inputs(x_t, cond, illum)?;
        let lay = self.arch.layout();
        let cv = self.arch.convs();
        let temb = time_embedding(t, self.arch.time_dim);
        let x_in = FeatureMap::concat(x_t, cond);
        let illum_fm = FeatureMap::from_image(illum);

        let mut a0 = cv.conv_in.forward(&x_in, self.block(&lay.conv_in_w), self.block(&lay.conv_in_b));
        a0.add_channel_bias(&matvec(self.block(&lay.time0), &temb));
        let h0 = silu(&a0);
        let (g0, inj0) = if self.illum_injection {
            let w = AttentionWeights {
                q: self.block(&lay.q0),
                k: self.block(&lay.k0),
                v: self.block(&lay.v0),
                d: self.arch.base,
            };
            let (g, inj) = self.inject(&illum_fm, cv.enc0, &lay.enc0_w, &lay.enc0_b, w, &h0, keep)?;
            (g, Some(inj))
        } else {
            (h0.clone(), None)
        };

        let mut a1 = cv.down.forward(&g0, self.block(&lay.down_w), self.block(&lay.down_b));
        a1.add_channel_bias(&matvec(self.block(&lay.time1), &temb));
        let h1 = silu(&a1);
        let (g1, inj1) = match &inj0 {
            Some(inj0) => {
                let w = AttentionWeights {
                    q: self.block(&lay.q1),
                    k: self.block(&lay.k1),
                    v: self.block(&lay.v1),
                    d: self.arch.deep,
                };
                let (g, inj) = self.inject(&inj0.f, cv.enc1, &lay.enc1_w, &lay.enc1_b, w, &h1, keep)?;
                (g, Some(inj))
            }
            None => (h1.clone(), None),
        };

        let u = upsample2(&g1);
        let p2 = cv.up1.forward(&u, self.block(&lay.up1_w), self.block(&lay.up1_b));
        let mut h2 = silu(&p2);
        h2.add_assign(&g0);
        let p3 = cv.up0.forward(&h2, self.block(&lay.up0_w), self.block(&lay.up0_b));
        let h3 = silu(&p3);
        let out = cv.out.forward(&h3, self.block(&lay.out_w), self.block(&lay.out_b));
        let trace = keep.then_some(Trace { x_in, illum: illum_fm, temb, a0, inj0, g0, a1, inj1, u, p2, h2, p3, h3 });
        Ok((out, trace))
    }

    /// `eps_theta(x_t, x_cond, x_illu, t)`.
    pub fn denoise_predict(
        &self,
        x_t: &ImageBuffer,
        cond: &ImageBuffer,
        illum: &IlluminationMap,
        t: usize,
    ) -> Result<ImageBuffer> {
        let (out, _) = self.forward(x_t, cond, illum.as_image(), t, false)?;
        let (h, w, c) = x_t.dims();
        ImageBuffer::new(h, w, c, out.data)
    }

    /// Prediction plus the gradient of `<prediction, d_out>` with respect to
    /// every parameter, accumulated into `grad`.
    pub(crate) fn predict_with_grad(
        &self,
        x_t: &ImageBuffer,
        cond: &ImageBuffer,
        illum: &ImageBuffer,
        t: usize,
        d_out: impl FnOnce(&FeatureMap) -> FeatureMap,
        grad: &mut [f64],
    ) -> Result<FeatureMap> {
        let (out, trace) = self.forward(x_t, cond, illum, t, true)?;
        let tr = trace.expect("trace requested");
        let dout = d_out(&out);
        self.backward(&tr, &dout, grad);
        Ok(out)
    }

    fn backward(&self, tr: &Trace, dout: &FeatureMap, grad: &mut [f64]) {
        let lay = self.arch.layout();
        let cv = self.arch.convs();
        let th = &self.theta;

        let dh3 = conv_bwd(cv.out, &tr.h3, th, &lay.out_w, &lay.out_b, dout, grad, true).unwrap();
        let dp3 = silu_backward(&tr.p3, &dh3);
        let dh2 = conv_bwd(cv.up0, &tr.h2, th, &lay.up0_w, &lay.up0_b, &dp3, grad, true).unwrap();
        let mut dg0 = dh2.clone();
        let dp2 = silu_backward(&tr.p2, &dh2);
        let du = conv_bwd(cv.up1, &tr.u, th, &lay.up1_w, &lay.up1_b, &dp2, grad, true).unwrap();
        let dg1 = upsample2_backward(&du);

        let (dh1, df0_from_enc1) = match &tr.inj1 {
            Some(inj) => {
                let (df1, dl) = attn_bwd(th, &lay.q1, &lay.k1, &lay.v1, self.arch.deep, inj, &dg1, grad);
                let de1 = silu_backward(&inj.e, &df1);
                let f0 = &tr.inj0.as_ref().expect("deep injection implies shallow").f;
                (dl, conv_bwd(cv.enc1, f0, th, &lay.enc1_w, &lay.enc1_b, &de1, grad, true))
            }
            None => (dg1, None),
        };
        let da1 = silu_backward(&tr.a1, &dh1);
        outer_acc(&mut grad[lay.time1.clone()], &da1.channel_sums(), &tr.temb);
        dg0.add_assign(&conv_bwd(cv.down, &tr.g0, th, &lay.down_w, &lay.down_b, &da1, grad, true).unwrap());

        let dh0 = match &tr.inj0 {
            Some(inj) => {
                let (mut df0, dl) = attn_bwd(th, &lay.q0, &lay.k0, &lay.v0, self.arch.base, inj, &dg0, grad);
                if let Some(extra) = &df0_from_enc1 {
                    df0.add_assign(extra);
                }
                let de0 = silu_backward(&inj.e, &df0);
                conv_bwd(cv.enc0, &tr.illum, th, &lay.enc0_w, &lay.enc0_b, &de0, grad, false);
                dl
            }
            None => dg0,
        };
        let da0 = silu_backward(&tr.a0, &dh0);
        outer_acc(&mut grad[lay.time0.clone()], &da0.channel_sums(), &tr.temb);
        conv_bwd(cv.conv_in, &tr.x_in, th, &lay.conv_in_w, &lay.conv_in_b, &da0, grad, false);
    }
}

fn check_even(h: usize, w: usize) -> Result<()> {
    if h == 0 || w == 0 || !h.is_multiple_of(2) || !w.is_multiple_of(2) {
        return Err(Error::shape(format!("spatial dims must be even and non-zero, got {h}x{w}")));
    }
    Ok(())
}

fn outer_acc(dst: &mut [f64], col: &[f64], row: &[f64]) {
    for (i, &c) in col.iter().enumerate() {
        for (d, r) in dst[i * row.len()..(i + 1) * row.len()].iter_mut().zip(row) {
            *d += c * r;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_bwd(
    conv: Conv3,
    x: &FeatureMap,
    theta: &[f64],
    w: &Range<usize>,
    b: &Range<usize>,
    dy: &FeatureMap,
    grad: &mut [f64],
    want_input: bool,
) -> Option<FeatureMap> {
    // Weight and bias blocks are adjacent in the layout.
    debug_assert_eq!(w.end, b.start);
    let (dw, db) = grad[w.start..b.end].split_at_mut(w.len());
    conv.backward(x, &theta[w.clone()], dy, dw, db, want_input)
}

/// Backward through `g = L + attend(F, L)`; returns `(dF, dL)`.
#[allow(clippy::too_many_arguments)]
fn attn_bwd(
    theta: &[f64],
    q: &Range<usize>,
    k: &Range<usize>,
    v: &Range<usize>,
    d: usize,
    inj: &Injection,
    dg: &FeatureMap,
    grad: &mut [f64],
) -> (FeatureMap, FeatureMap) {
    let weights = AttentionWeights { q: &theta[q.clone()], k: &theta[k.clone()], v: &theta[v.clone()], d };
    let d_tok = Tokens { n: dg.pixels(), dim: dg.c, data: dg.data.clone() };
    // q, k, v are consecutive blocks of equal size.
    let (dq, rest) = grad[q.start..v.end].split_at_mut(q.len());
    let (dk, dv) = rest.split_at_mut(k.len());
    let g = attend_backward(
        &inj.f_tok,
        &inj.l_tok,
        weights,
        inj.cache.as_ref().expect("attention cache kept"),
        &d_tok,
        dq,
        dk,
        dv,
    );
    let df = FeatureMap { h: inj.f.h, w: inj.f.w, c: inj.f.c, data: g.d_query_src.data };
    let mut dl = FeatureMap { h: dg.h, w: dg.w, c: dg.c, data: g.d_kv_src.data };
    dl.add_assign(dg);
    (df, dl)
}

impl Denoiser for TinyDenoiser {
    fn predict(&self, x_t: &ImageBuffer, cond: &ImageBuffer, illum: &IlluminationMap, t: usize) -> Result<ImageBuffer> {
        self.denoise_predict(x_t, cond, illum, t)
    }
}
