//! ε_θ: a U-Net-lite over `16 × 8 × F` latents. Each level runs a residual
//! block (two conv → group norm → SiLU stages with the time embedding added
//! after the first) followed by cross-attention to the caption tokens. Pooling
//! halves the frame axis only; the 8-row axis is never resampled.

mod layers;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::captions::{ConditionEmbedding, COND_DIM};
use crate::codec::{LatentTensor, Layout, CHANNELS};
use crate::diffusion::NoisePredictor;
use crate::{Error, Result};
use layers::{
    downsample, downsample_backward, silu, silu_backward, timestep_embedding, upsample, upsample_backward, AttnCache,
    Conv, CrossAttention, GnCache, GroupNorm, Linear, ROWS,
};

pub const IN_CHANNELS: usize = CHANNELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DenoiserConfig {
    pub base_width: usize,
    pub depth: usize,
    pub attn_dim: usize,
    pub heads: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig { base_width: 32, depth: 2, attn_dim: 64, heads: 4 }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.base_width == 0 || self.attn_dim == 0 || self.heads == 0 {
            return bad("denoiser widths and head count must be positive".into());
        }
        if self.depth > 5 {
            return bad(format!("depth {} exceeds 5", self.depth));
        }
        if !self.attn_dim.is_multiple_of(self.heads) {
            return bad(format!("attn_dim {} not divisible by {} heads", self.attn_dim, self.heads));
        }
        if (0..=self.depth).map(|l| self.width(l)).any(|c| c % 8.min(c) != 0) {
            return bad(format!("base_width {} incompatible with 8 norm groups", self.base_width));
        }
        Ok(())
    }

    pub fn time_dim(&self) -> usize {
        4 * self.base_width
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    /// Frame counts must be a multiple of this.
    pub fn frame_multiple(&self) -> usize {
        1 << self.depth
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ParamEntry {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    FanIn(usize),
    Zero,
    One,
}

#[derive(Default)]
struct Builder {
    entries: Vec<ParamEntry>,
    inits: Vec<Init>,
    len: usize,
}

impl Builder {
    fn alloc(&mut self, name: String, shape: Vec<usize>, init: Init) -> usize {
        let offset = self.len;
        let e = ParamEntry { name, shape, offset };
        self.len += e.len();
        self.entries.push(e);
        self.inits.push(init);
        offset
    }

    fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, zero: bool) -> Conv {
        let wi = if zero { Init::Zero } else { Init::FanIn(cin * k * k) };
        let w = self.alloc(format!("{name}.weight"), vec![cout, cin, k, k], wi);
        let b = self.alloc(format!("{name}.bias"), vec![cout], Init::Zero);
        Conv { cin, cout, k, w, b }
    }

    fn linear(&mut self, name: &str, din: usize, dout: usize) -> Linear {
        let w = self.alloc(format!("{name}.weight"), vec![dout, din], Init::FanIn(din));
        let b = self.alloc(format!("{name}.bias"), vec![dout], Init::Zero);
        Linear { din, dout, w, b }
    }

    fn norm(&mut self, name: &str, c: usize) -> GroupNorm {
        let gamma = self.alloc(format!("{name}.gamma"), vec![c], Init::One);
        let beta = self.alloc(format!("{name}.beta"), vec![c], Init::Zero);
        GroupNorm { c, groups: 8.min(c), gamma, beta }
    }

    fn res(&mut self, name: &str, cin: usize, cout: usize, tdim: usize) -> ResBlock {
        ResBlock {
            conv1: self.conv(&format!("{name}.conv1"), cin, cout, 3, false),
            norm1: self.norm(&format!("{name}.norm1"), cout),
            tproj: self.linear(&format!("{name}.time"), tdim, cout),
            conv2: self.conv(&format!("{name}.conv2"), cout, cout, 3, false),
            norm2: self.norm(&format!("{name}.norm2"), cout),
            skip: (cin != cout).then(|| self.conv(&format!("{name}.skip"), cin, cout, 1, false)),
        }
    }

    fn attn(&mut self, name: &str, c: usize, dim: usize, heads: usize) -> CrossAttention {
        let norm = self.norm(&format!("{name}.norm"), c);
        let wq = self.alloc(format!("{name}.q"), vec![dim, c], Init::FanIn(c));
        let wk = self.alloc(format!("{name}.k"), vec![dim, COND_DIM], Init::FanIn(COND_DIM));
        let wv = self.alloc(format!("{name}.v"), vec![dim, COND_DIM], Init::FanIn(COND_DIM));
        let wo = self.alloc(format!("{name}.out.weight"), vec![c, dim], Init::FanIn(dim));
        let bo = self.alloc(format!("{name}.out.bias"), vec![c], Init::Zero);
        CrossAttention { c, dim, heads, cond: COND_DIM, norm, wq, wk, wv, wo, bo }
    }
}

#[derive(Debug, Clone, Copy)]
struct ResBlock {
    conv1: Conv,
    norm1: GroupNorm,
    tproj: Linear,
    conv2: Conv,
    norm2: GroupNorm,
    skip: Option<Conv>,
}

struct ResCache {
    col1: Vec<f64>,
    gn1: GnCache,
    pre1: Vec<f64>,
    col2: Vec<f64>,
    gn2: GnCache,
    pre2: Vec<f64>,
    skip_col: Vec<f64>,
}

impl ResBlock {
    fn forward(&self, p: &[f64], x: &[f64], tact: &[f64], w: usize) -> (Vec<f64>, ResCache) {
        let n = ROWS * w;
        let (h1, col1) = self.conv1.forward(p, x, w);
        let (pre1, gn1) = self.norm1.forward(p, &h1, n);
        let tp = self.tproj.forward(p, tact);
        let mut a = silu(&pre1);
        for (c, &v) in tp.iter().enumerate() {
            a[c * n..(c + 1) * n].iter_mut().for_each(|x| *x += v);
        }
        let (h2, col2) = self.conv2.forward(p, &a, w);
        let (pre2, gn2) = self.norm2.forward(p, &h2, n);
        let mut out = silu(&pre2);
        let skip_col = match &self.skip {
            Some(s) => {
                let (y, col) = s.forward(p, x, w);
                out.iter_mut().zip(&y).for_each(|(o, v)| *o += v);
                col
            }
            None => {
                out.iter_mut().zip(x).for_each(|(o, v)| *o += v);
                Vec::new()
            }
        };
        (out, ResCache { col1, gn1, pre1, col2, gn2, pre2, skip_col })
    }

    /// Returns the input gradient; accumulates into `dtact`.
    fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        cache: &ResCache,
        tact: &[f64],
        dtact: &mut [f64],
        dout: &[f64],
        w: usize,
    ) -> Vec<f64> {
        let n = ROWS * w;
        let dpre2 = silu_backward(&cache.pre2, dout);
        let dh2 = self.norm2.backward(p, g, &cache.gn2, &dpre2, n);
        let da = self.conv2.backward(p, g, &cache.col2, &dh2, w);
        let dtp: Vec<f64> = da.chunks(n).map(|r| r.iter().sum()).collect();
        let dt = self.tproj.backward(p, g, tact, &dtp);
        dtact.iter_mut().zip(&dt).for_each(|(a, b)| *a += b);
        let dpre1 = silu_backward(&cache.pre1, &da);
        let dh1 = self.norm1.backward(p, g, &cache.gn1, &dpre1, n);
        let mut dx = self.conv1.backward(p, g, &cache.col1, &dh1, w);
        match &self.skip {
            Some(s) => {
                let ds = s.backward(p, g, &cache.skip_col, dout, w);
                dx.iter_mut().zip(&ds).for_each(|(a, b)| *a += b);
            }
            None => dx.iter_mut().zip(dout).for_each(|(a, b)| *a += b),
        }
        dx
    }
}

#[derive(Debug, Clone)]
struct Arch {
    conv_in: Conv,
    /// `[base_width][ROWS]` offset added after `conv_in`. The convolutions
    /// are shift-invariant over rows, so this is the only place a row learns
    /// its own statistics.
    row_emb: usize,
    time1: Linear,
    time2: Linear,
    down: Vec<(ResBlock, CrossAttention)>,
    mid: (ResBlock, CrossAttention),
    up: Vec<(ResBlock, CrossAttention)>,
    out_norm: GroupNorm,
    conv_out: Conv,
    /// Per-row gain on the input, from the time embedding, added to the
    /// output: the optimal predictor for a Gaussian row of fixed variance.
    /// Group norms make the main path blind to the input's scale; this path
    /// is not, which keeps sampling from drifting.
    skip_gain: Linear,
}

fn build(config: &DenoiserConfig) -> (Arch, Builder) {
    let mut b = Builder::default();
    let td = config.time_dim();
    let (a, h) = (config.attn_dim, config.heads);
    let conv_in = b.conv("conv_in", IN_CHANNELS, config.width(0), 3, false);
    let row_emb = b.alloc("conv_in.row".into(), vec![config.width(0), ROWS], Init::Zero);
    let time1 = b.linear("time.0", td, td);
    let time2 = b.linear("time.1", td, td);
    let mut down = Vec::new();
    let mut prev = config.width(0);
    for l in 0..config.depth {
        let c = config.width(l);
        down.push((b.res(&format!("down.{l}.res"), prev, c, td), b.attn(&format!("down.{l}.attn"), c, a, h)));
        prev = c;
    }
    let cm = config.width(config.depth);
    let mid = (b.res("mid.res", prev, cm, td), b.attn("mid.attn", cm, a, h));
    let mut up = Vec::new();
    prev = cm;
    for l in (0..config.depth).rev() {
        let c = config.width(l);
        up.push((b.res(&format!("up.{l}.res"), prev + c, c, td), b.attn(&format!("up.{l}.attn"), c, a, h)));
        prev = c;
    }
    let out_norm = b.norm("out.norm", prev);
    let conv_out = b.conv("out.conv", prev, IN_CHANNELS, 3, true);
    let skip_gain = Linear {
        din: td,
        dout: IN_CHANNELS * ROWS,
        w: b.alloc("out.skip.weight".into(), vec![IN_CHANNELS * ROWS, td], Init::Zero),
        b: b.alloc("out.skip.bias".into(), vec![IN_CHANNELS * ROWS], Init::Zero),
    };
    (Arch { conv_in, row_emb, time1, time2, down, mid, up, out_norm, conv_out, skip_gain }, b)
}

pub fn param_layout(config: &DenoiserConfig) -> Vec<ParamEntry> {
    build(config).1.entries
}

pub fn param_count(config: &DenoiserConfig) -> usize {
    build(config).1.len
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenoiserParams {
    pub config: DenoiserConfig,
    pub values: Vec<f64>,
}

/// Fan-in scaled uniform weights, unit norm gains, zero biases, and a zero
/// output convolution.
pub fn init_params(config: &DenoiserConfig, seed: u64) -> Result<DenoiserParams> {
    config.validate()?;
    let (_, b) = build(config);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = vec![0.0; b.len];
    for (e, init) in b.entries.iter().zip(&b.inits) {
        let dst = &mut values[e.offset..e.offset + e.len()];
        match *init {
            Init::FanIn(f) => {
                let bound = 1.0 / (f as f64).sqrt();
                dst.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
            }
            Init::One => dst.fill(1.0),
            Init::Zero => {}
        }
    }
    Ok(DenoiserParams { config: *config, values })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ForwardOptions {
    /// Bypass every cross-attention block (the attention-free network).
    pub skip_attention: bool,
}

/// Intermediate state from [`DenoiserParams::forward_trace`], consumed by
/// [`DenoiserParams::backward`].
pub struct Trace {
    frames: usize,
    t_emb: Vec<f64>,
    t_pre: Vec<f64>,
    t_mid: Vec<f64>,
    temb: Vec<f64>,
    tact: Vec<f64>,
    cond: Vec<f64>,
    tokens: usize,
    col_in: Vec<f64>,
    down: Vec<(ResCache, Option<AttnCache>)>,
    mid: (ResCache, Option<AttnCache>),
    up: Vec<(ResCache, Option<AttnCache>)>,
    out_gn: GnCache,
    out_pre: Vec<f64>,
    out_col: Vec<f64>,
    input: Vec<f64>,
    gain: Vec<f64>,
}

pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

impl DenoiserParams {
    pub fn layout(&self) -> Vec<ParamEntry> {
        param_layout(&self.config)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.layout().into_iter().find(|e| e.name == name).map(|e| &self.values[e.offset..e.offset + e.len()])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut [f64]> {
        let e = self.layout().into_iter().find(|e| e.name == name)?;
        Some(&mut self.values[e.offset..e.offset + e.len()])
    }

    fn check(&self, z: &LatentTensor, cond: &ConditionEmbedding) -> Result<()> {
        if self.values.len() != param_count(&self.config) {
            return Err(Error::Shape(format!(
                "{} parameters for a config needing {}",
                self.values.len(),
                param_count(&self.config)
            )));
        }
        if z.layout != Layout::Diffusion {
            return Err(Error::Shape("denoiser input must be in the 16×8×F layout".into()));
        }
        let m = self.config.frame_multiple();
        if z.frames == 0 || !z.frames.is_multiple_of(m) {
            return Err(Error::Shape(format!("frame count {} is not a multiple of {m}", z.frames)));
        }
        if cond.token_count == 0 || cond.values.len() != cond.token_count * COND_DIM {
            return Err(Error::Shape(format!(
                "condition must hold {COND_DIM}-d tokens, got {} values for {} tokens",
                cond.values.len(),
                cond.token_count
            )));
        }
        Ok(())
    }

    pub fn forward(&self, z: &LatentTensor, t: usize, cond: &ConditionEmbedding) -> Result<Vec<f64>> {
        self.forward_with(z, t, cond, ForwardOptions::default())
    }

    /// A zero output head makes the whole network the zero map.
    fn head_is_zero(&self) -> bool {
        let arch = build(&self.config).0;
        let (c, s) = (arch.conv_out, arch.skip_gain);
        self.values[c.w..c.b + c.cout].iter().chain(&self.values[s.w..s.b + s.dout]).all(|&v| v == 0.0)
    }

    pub fn forward_with(
        &self,
        z: &LatentTensor,
        t: usize,
        cond: &ConditionEmbedding,
        options: ForwardOptions,
    ) -> Result<Vec<f64>> {
        self.check(z, cond)?;
        if self.head_is_zero() {
            return Ok(vec![0.0; z.values.len()]);
        }
        Ok(self.forward_trace(z, t, cond, options)?.0)
    }

    pub fn forward_trace(
        &self,
        z: &LatentTensor,
        t: usize,
        cond: &ConditionEmbedding,
        options: ForwardOptions,
    ) -> Result<(Vec<f64>, Trace)> {
        self.check(z, cond)?;
        let (arch, _) = build(&self.config);
        let p = &self.values;
        let tokens = cond.token_count;
        let cvec = cond.to_f64();

        let t_emb = timestep_embedding(t, self.config.time_dim());
        let t_pre = arch.time1.forward(p, &t_emb);
        let t_mid = silu(&t_pre);
        let temb = arch.time2.forward(p, &t_mid);
        let tact = silu(&temb);

        let attend = |att: &CrossAttention, h: Vec<f64>, w: usize| -> (Vec<f64>, Option<AttnCache>) {
            if options.skip_attention {
                (h, None)
            } else {
                let (o, c) = att.forward(p, &h, &cvec, tokens, ROWS * w);
                (o, Some(c))
            }
        };

        let mut w = z.frames;
        let (mut h, col_in) = arch.conv_in.forward(p, &z.values, w);
        for (cr, row) in h.chunks_mut(w).enumerate() {
            let e = p[arch.row_emb + cr];
            row.iter_mut().for_each(|v| *v += e);
        }
        let mut skips = Vec::new();
        let mut down = Vec::new();
        for (res, att) in &arch.down {
            let (r, rc) = res.forward(p, &h, &tact, w);
            let (a, ac) = attend(att, r, w);
            down.push((rc, ac));
            h = downsample(&a, w);
            skips.push(a);
            w /= 2;
        }
        let (r, rc) = arch.mid.0.forward(p, &h, &tact, w);
        let (a, ac) = attend(&arch.mid.1, r, w);
        let mid = (rc, ac);
        h = a;
        let mut up = Vec::new();
        for (res, att) in &arch.up {
            let mut x = upsample(&h, w);
            w *= 2;
            x.extend(skips.pop().expect("skip per level"));
            let (r, rc) = res.forward(p, &x, &tact, w);
            let (a, ac) = attend(att, r, w);
            up.push((rc, ac));
            h = a;
        }
        let (out_pre, out_gn) = arch.out_norm.forward(p, &h, ROWS * w);
        let (mut out, out_col) = arch.conv_out.forward(p, &silu(&out_pre), w);
        let gain = arch.skip_gain.forward(p, &tact);
        for ((o, x), &g) in out.chunks_mut(w).zip(z.values.chunks(w)).zip(&gain) {
            o.iter_mut().zip(x).for_each(|(o, x)| *o += g * x);
        }
        let trace = Trace {
            frames: z.frames,
            t_emb,
            t_pre,
            t_mid,
            temb,
            tact,
            cond: cvec,
            tokens,
            col_in,
            down,
            mid,
            up,
            out_gn,
            out_pre,
            out_col,
            input: z.values.clone(),
            gain,
        };
        Ok((out, trace))
    }

    /// Exact gradients of `Σ dout · forward(..)` with respect to every
    /// parameter and to the input latent.
    pub fn backward(&self, trace: &Trace, dout: &[f64]) -> Result<Gradients> {
        let n0 = CHANNELS * ROWS * trace.frames;
        if dout.len() != n0 {
            return Err(Error::Shape(format!("upstream gradient of {} values for {n0}", dout.len())));
        }
        let (arch, _) = build(&self.config);
        let p = &self.values;
        let mut g = vec![0.0; p.len()];
        let mut dtact = vec![0.0; trace.tact.len()];
        let (cond, tokens) = (&trace.cond, trace.tokens);
        let depth = self.config.depth;
        let mut w = trace.frames;

        let dgain: Vec<f64> =
            dout.chunks(w).zip(trace.input.chunks(w)).map(|(d, x)| d.iter().zip(x).map(|(a, b)| a * b).sum()).collect();
        let dt = arch.skip_gain.backward(p, &mut g, &trace.tact, &dgain);
        dtact.iter_mut().zip(&dt).for_each(|(a, b)| *a += b);
        let dx = arch.conv_out.backward(p, &mut g, &trace.out_col, dout, w);
        let dpre = silu_backward(&trace.out_pre, &dx);
        let mut dh = arch.out_norm.backward(p, &mut g, &trace.out_gn, &dpre, ROWS * w);

        let attn_back = |g: &mut Vec<f64>, att: &CrossAttention, cache: &Option<AttnCache>, d: Vec<f64>, w: usize| match cache {
            Some(c) => att.backward(p, g, c, cond, tokens, &d, ROWS * w),
            None => d,
        };

        let mut dskips = vec![Vec::new(); depth];
        for (i, ((res, att), (rc, ac))) in arch.up.iter().zip(&trace.up).enumerate().rev() {
            let l = depth - 1 - i;
            let d = attn_back(&mut g, att, ac, dh, w);
            let dcat = res.backward(p, &mut g, rc, &trace.tact, &mut dtact, &d, w);
            let c_up = dcat.len() - self.config.width(l) * ROWS * w;
            dskips[l] = dcat[c_up..].to_vec();
            w /= 2;
            dh = upsample_backward(&dcat[..c_up], w);
        }
        let d = attn_back(&mut g, &arch.mid.1, &trace.mid.1, dh, w);
        dh = arch.mid.0.backward(p, &mut g, &trace.mid.0, &trace.tact, &mut dtact, &d, w);
        for (l, ((res, att), (rc, ac))) in arch.down.iter().zip(&trace.down).enumerate().rev() {
            let mut d = downsample_backward(&dh, 2 * w);
            w *= 2;
            d.iter_mut().zip(&dskips[l]).for_each(|(a, b)| *a += b);
            let d = attn_back(&mut g, att, ac, d, w);
            dh = res.backward(p, &mut g, rc, &trace.tact, &mut dtact, &d, w);
        }
        for (cr, row) in dh.chunks(w).enumerate() {
            g[arch.row_emb + cr] += row.iter().sum::<f64>();
        }
        let mut input = arch.conv_in.backward(p, &mut g, &trace.col_in, &dh, w);
        for ((a, d), &g) in input.chunks_mut(w).zip(dout.chunks(w)).zip(&trace.gain) {
            a.iter_mut().zip(d).for_each(|(a, d)| *a += g * d);
        }

        let dtemb = silu_backward(&trace.temb, &dtact);
        let dmid = arch.time2.backward(p, &mut g, &trace.t_mid, &dtemb);
        let dpre = silu_backward(&trace.t_pre, &dmid);
        arch.time1.backward(p, &mut g, &trace.t_emb, &dpre);
        Ok(Gradients { params: g, input })
    }
}

impl NoisePredictor for DenoiserParams {
    fn predict(&self, z_t: &LatentTensor, t: usize, condition: &ConditionEmbedding) -> Result<Vec<f64>> {
        self.forward(z_t, t, condition)
    }
}
