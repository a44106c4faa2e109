//! Forward/backward primitives over feature maps stored `[channel][row][frame]`.
//! Every map has `ROWS` rows; `w` is the frame count at the current level.

use crate::linalg::{gemm_abt_acc, gemm_acc, gemm_atb_acc};

pub const ROWS: usize = 8;
pub const GN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub w: usize,
    pub b: usize,
}

fn im2col(x: &[f64], cin: usize, w: usize) -> Vec<f64> {
    let p = ROWS * w;
    let mut col = vec![0.0; cin * 9 * p];
    for ci in 0..cin {
        let src = &x[ci * p..(ci + 1) * p];
        for ky in 0..3 {
            for kx in 0..3 {
                let dst = &mut col[(ci * 9 + ky * 3 + kx) * p..][..p];
                for y in 0..ROWS {
                    let sy = y as isize + ky as isize - 1;
                    if !(0..ROWS as isize).contains(&sy) {
                        continue;
                    }
                    let srow = &src[sy as usize * w..][..w];
                    let drow = &mut dst[y * w..][..w];
                    match kx {
                        0 => drow[1..].copy_from_slice(&srow[..w - 1]),
                        1 => drow.copy_from_slice(srow),
                        _ => drow[..w - 1].copy_from_slice(&srow[1..]),
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], cin: usize, w: usize) -> Vec<f64> {
    let p = ROWS * w;
    let mut x = vec![0.0; cin * p];
    for ci in 0..cin {
        let dst = &mut x[ci * p..(ci + 1) * p];
        for ky in 0..3 {
            for kx in 0..3 {
                let src = &col[(ci * 9 + ky * 3 + kx) * p..][..p];
                for y in 0..ROWS {
                    let sy = y as isize + ky as isize - 1;
                    if !(0..ROWS as isize).contains(&sy) {
                        continue;
                    }
                    let drow = &mut dst[sy as usize * w..][..w];
                    let srow = &src[y * w..][..w];
                    match kx {
                        0 => drow[..w - 1].iter_mut().zip(&srow[1..]).for_each(|(d, s)| *d += s),
                        1 => drow.iter_mut().zip(srow).for_each(|(d, s)| *d += s),
                        _ => drow[1..].iter_mut().zip(&srow[..w - 1]).for_each(|(d, s)| *d += s),
                    }
                }
            }
        }
    }
    x
}

impl Conv {
    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    /// Returns the output and the column buffer the backward pass needs
    /// (the input itself for 1×1 kernels).
    pub fn forward(&self, p: &[f64], x: &[f64], w: usize) -> (Vec<f64>, Vec<f64>) {
        let n = ROWS * w;
        let col = if self.k == 3 { im2col(x, self.cin, w) } else { x.to_vec() };
        let kk = self.cin * self.k * self.k;
        let mut out = vec![0.0; self.cout * n];
        for (co, row) in out.chunks_mut(n).enumerate() {
            row.fill(p[self.b + co]);
        }
        gemm_acc(&p[self.w..self.w + self.weight_len()], &col, &mut out, self.cout, kk, n);
        (out, col)
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], col: &[f64], dout: &[f64], w: usize) -> Vec<f64> {
        let n = ROWS * w;
        let kk = self.cin * self.k * self.k;
        gemm_abt_acc(dout, col, &mut g[self.w..self.w + self.weight_len()], self.cout, kk, n);
        for (co, row) in dout.chunks(n).enumerate() {
            g[self.b + co] += row.iter().sum::<f64>();
        }
        let mut dcol = vec![0.0; kk * n];
        gemm_atb_acc(&p[self.w..self.w + self.weight_len()], dout, &mut dcol, self.cout, kk, n);
        if self.k == 3 {
            col2im(&dcol, self.cin, w)
        } else {
            dcol
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub din: usize,
    pub dout: usize,
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = p[self.b..self.b + self.dout].to_vec();
        gemm_acc(&p[self.w..self.w + self.din * self.dout], x, &mut y, self.dout, self.din, 1);
        y
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], x: &[f64], dy: &[f64]) -> Vec<f64> {
        gemm_acc(dy, x, &mut g[self.w..self.w + self.din * self.dout], self.dout, 1, self.din);
        g[self.b..self.b + self.dout].iter_mut().zip(dy).for_each(|(a, b)| *a += b);
        let mut dx = vec![0.0; self.din];
        gemm_atb_acc(&p[self.w..self.w + self.din * self.dout], dy, &mut dx, self.dout, self.din, 1);
        dx
    }
}

#[derive(Debug, Clone, Copy)]
pub struct GroupNorm {
    pub c: usize,
    pub groups: usize,
    pub gamma: usize,
    pub beta: usize,
}

pub struct GnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl GroupNorm {
    pub fn forward(&self, p: &[f64], x: &[f64], n: usize) -> (Vec<f64>, GnCache) {
        let cpg = self.c / self.groups;
        let m = (cpg * n) as f64;
        let mut xhat = vec![0.0; x.len()];
        let mut inv_std = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let r = g * cpg * n..(g + 1) * cpg * n;
            let xs = &x[r.clone()];
            let mean = xs.iter().sum::<f64>() / m;
            let var = xs.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / m;
            let is = 1.0 / (var + GN_EPS).sqrt();
            xhat[r].iter_mut().zip(xs).for_each(|(h, v)| *h = (v - mean) * is);
            inv_std.push(is);
        }
        let mut y = vec![0.0; x.len()];
        for c in 0..self.c {
            let (ga, be) = (p[self.gamma + c], p[self.beta + c]);
            y[c * n..(c + 1) * n].iter_mut().zip(&xhat[c * n..(c + 1) * n]).for_each(|(o, h)| *o = ga * h + be);
        }
        (y, GnCache { xhat, inv_std })
    }

    pub fn backward(&self, p: &[f64], g: &mut [f64], cache: &GnCache, dy: &[f64], n: usize) -> Vec<f64> {
        let cpg = self.c / self.groups;
        let m = (cpg * n) as f64;
        let mut dxhat = vec![0.0; dy.len()];
        for c in 0..self.c {
            let r = c * n..(c + 1) * n;
            let (mut dg, mut db) = (0.0, 0.0);
            for (d, h) in dy[r.clone()].iter().zip(&cache.xhat[r.clone()]) {
                dg += d * h;
                db += d;
            }
            g[self.gamma + c] += dg;
            g[self.beta + c] += db;
            let ga = p[self.gamma + c];
            dxhat[r.clone()].iter_mut().zip(&dy[r]).for_each(|(o, d)| *o = d * ga);
        }
        let mut dx = vec![0.0; dy.len()];
        for grp in 0..self.groups {
            let r = grp * cpg * n..(grp + 1) * cpg * n;
            let (dh, h) = (&dxhat[r.clone()], &cache.xhat[r.clone()]);
            let s1: f64 = dh.iter().sum();
            let s2: f64 = dh.iter().zip(h).map(|(a, b)| a * b).sum();
            let is = cache.inv_std[grp];
            for ((o, a), b) in dx[r].iter_mut().zip(dh).zip(h) {
                *o = is / m * (m * a - s1 - b * s2);
            }
        }
        dx
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn silu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

/// Chain rule through SiLU given its input.
pub fn silu_backward(x: &[f64], dy: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(dy)
        .map(|(&v, d)| {
            let s = sigmoid(v);
            d * s * (1.0 + v * (1.0 - s))
        })
        .collect()
}

/// Average-pool pairs of frames.
pub fn downsample(x: &[f64], w: usize) -> Vec<f64> {
    x.chunks(w).flat_map(|r| r.chunks(2).map(|p| 0.5 * (p[0] + p[1]))).collect()
}

pub fn downsample_backward(dy: &[f64], w: usize) -> Vec<f64> {
    dy.chunks(w / 2).flat_map(|r| r.iter().flat_map(|&d| [0.5 * d, 0.5 * d])).collect()
}

/// Nearest-neighbour doubling of the frame axis; `w` is the input width.
pub fn upsample(x: &[f64], w: usize) -> Vec<f64> {
    x.chunks(w).flat_map(|r| r.iter().flat_map(|&v| [v, v])).collect()
}

pub fn upsample_backward(dy: &[f64], w: usize) -> Vec<f64> {
    dy.chunks(2 * w).flat_map(|r| r.chunks(2).map(|p| p[0] + p[1])).collect()
}

/// Multi-head cross-attention from feature positions to condition tokens,
/// added residually: `h + Wo·attn(Wq·GN(h), Wk·c, Wv·c) + bo`.
#[derive(Debug, Clone, Copy)]
pub struct CrossAttention {
    pub c: usize,
    pub dim: usize,
    pub heads: usize,
    pub cond: usize,
    pub norm: GroupNorm,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub bo: usize,
}

pub struct AttnCache {
    gn: GnCache,
    hn: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// `[head][pos][token]`
    att: Vec<f64>,
    o: Vec<f64>,
}

impl CrossAttention {
    pub fn forward(&self, p: &[f64], h: &[f64], cond: &[f64], tokens: usize, n: usize) -> (Vec<f64>, AttnCache) {
        let (a, dh) = (self.dim, self.dim / self.heads);
        let scale = 1.0 / (dh as f64).sqrt();
        let (hn, gn) = self.norm.forward(p, h, n);
        let mut q = vec![0.0; a * n];
        gemm_acc(&p[self.wq..self.wq + a * self.c], &hn, &mut q, a, self.c, n);
        let mut k = vec![0.0; a * tokens];
        let mut v = vec![0.0; a * tokens];
        gemm_abt_acc(&p[self.wk..self.wk + a * self.cond], cond, &mut k, a, tokens, self.cond);
        gemm_abt_acc(&p[self.wv..self.wv + a * self.cond], cond, &mut v, a, tokens, self.cond);

        let mut att = vec![0.0; self.heads * n * tokens];
        let mut o = vec![0.0; a * n];
        for hd in 0..self.heads {
            let d0 = hd * dh;
            for pos in 0..n {
                let s = &mut att[(hd * n + pos) * tokens..][..tokens];
                for (j, sj) in s.iter_mut().enumerate() {
                    *sj = (0..dh).map(|d| q[(d0 + d) * n + pos] * k[(d0 + d) * tokens + j]).sum::<f64>() * scale;
                }
                let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for sj in s.iter_mut() {
                    *sj = (*sj - mx).exp();
                    z += *sj;
                }
                s.iter_mut().for_each(|sj| *sj /= z);
                for d in 0..dh {
                    o[(d0 + d) * n + pos] = s.iter().zip(&v[(d0 + d) * tokens..][..tokens]).map(|(x, y)| x * y).sum();
                }
            }
        }
        let mut out = h.to_vec();
        for c in 0..self.c {
            let b = p[self.bo + c];
            out[c * n..(c + 1) * n].iter_mut().for_each(|x| *x += b);
        }
        gemm_acc(&p[self.wo..self.wo + self.c * a], &o, &mut out, self.c, a, n);
        (out, AttnCache { gn, hn, q, k, v, att, o })
    }

    pub fn backward(
        &self,
        p: &[f64],
        g: &mut [f64],
        cache: &AttnCache,
        cond: &[f64],
        tokens: usize,
        dout: &[f64],
        n: usize,
    ) -> Vec<f64> {
        let (a, dh) = (self.dim, self.dim / self.heads);
        let scale = 1.0 / (dh as f64).sqrt();
        gemm_abt_acc(dout, &cache.o, &mut g[self.wo..self.wo + self.c * a], self.c, a, n);
        for c in 0..self.c {
            g[self.bo + c] += dout[c * n..(c + 1) * n].iter().sum::<f64>();
        }
        let mut d_o = vec![0.0; a * n];
        gemm_atb_acc(&p[self.wo..self.wo + self.c * a], dout, &mut d_o, self.c, a, n);

        let mut dq = vec![0.0; a * n];
        let mut dk = vec![0.0; a * tokens];
        let mut dv = vec![0.0; a * tokens];
        let mut datt = vec![0.0; tokens];
        for hd in 0..self.heads {
            let d0 = hd * dh;
            for pos in 0..n {
                let s = &cache.att[(hd * n + pos) * tokens..][..tokens];
                for (j, dj) in datt.iter_mut().enumerate() {
                    *dj = 0.0;
                    for d in 0..dh {
                        let go = d_o[(d0 + d) * n + pos];
                        *dj += go * cache.v[(d0 + d) * tokens + j];
                        dv[(d0 + d) * tokens + j] += s[j] * go;
                    }
                }
                let dot: f64 = datt.iter().zip(s).map(|(x, y)| x * y).sum();
                for j in 0..tokens {
                    let ds = s[j] * (datt[j] - dot) * scale;
                    for d in 0..dh {
                        dq[(d0 + d) * n + pos] += ds * cache.k[(d0 + d) * tokens + j];
                        dk[(d0 + d) * tokens + j] += ds * cache.q[(d0 + d) * n + pos];
                    }
                }
            }
        }
        gemm_acc(&dk, cond, &mut g[self.wk..self.wk + a * self.cond], a, tokens, self.cond);
        gemm_acc(&dv, cond, &mut g[self.wv..self.wv + a * self.cond], a, tokens, self.cond);
        gemm_abt_acc(&dq, &cache.hn, &mut g[self.wq..self.wq + a * self.c], a, self.c, n);
        let mut dhn = vec![0.0; self.c * n];
        gemm_atb_acc(&p[self.wq..self.wq + a * self.c], &dq, &mut dhn, a, self.c, n);
        let mut dh_in = self.norm.backward(p, g, &cache.gn, &dhn, n);
        dh_in.iter_mut().zip(dout).for_each(|(x, d)| *x += d);
        dh_in
    }
}

/// Sinusoidal embedding of a step index, `dim` even.
pub fn timestep_embedding(t: usize, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut e = vec![0.0; dim];
    for i in 0..half {
        let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
        let arg = t as f64 * freq;
        e[i] = arg.sin();
        e[half + i] = arg.cos();
    }
    e
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> = <x, col2im(y)>
        let (cin, w) = (2, 5);
        let x: Vec<f64> = (0..cin * ROWS * w).map(|i| ((i * 7 % 13) as f64) - 6.0).collect();
        let y: Vec<f64> = (0..cin * 9 * ROWS * w).map(|i| ((i * 5 % 11) as f64) - 5.0).collect();
        let lhs: f64 = im2col(&x, cin, w).iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&col2im(&y, cin, w)).map(|(a, b)| a * b).sum();
        assert_eq!(lhs, rhs);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let conv = Conv { cin: 2, cout: 3, k: 3, w: 0, b: 54 };
        let p: Vec<f64> = (0..57).map(|i| (i as f64 * 0.37).sin()).collect();
        let w = 4;
        let x: Vec<f64> = (0..2 * ROWS * w).map(|i| (i as f64 * 0.11).cos()).collect();
        let (y, _) = conv.forward(&p, &x, w);
        for co in 0..3 {
            for r in 0..ROWS {
                for f in 0..w {
                    let mut s = p[54 + co];
                    for ci in 0..2 {
                        for ky in 0..3 {
                            for kx in 0..3 {
                                let (rr, ff) = (r as isize + ky - 1, f as isize + kx - 1);
                                if rr < 0 || rr >= ROWS as isize || ff < 0 || ff >= w as isize {
                                    continue;
                                }
                                let wi = ((co * 2 + ci) * 3 + ky as usize) * 3 + kx as usize;
                                s += p[wi] * x[ci * ROWS * w + rr as usize * w + ff as usize];
                            }
                        }
                    }
                    assert!((y[co * ROWS * w + r * w + f] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn pooling_pairs() {
        let x = [1.0, 3.0, 5.0, 7.0];
        assert_eq!(downsample(&x, 4), vec![2.0, 6.0]);
        assert_eq!(upsample(&[2.0, 6.0], 2), vec![2.0, 2.0, 6.0, 6.0]);
        assert_eq!(upsample_backward(&x, 2), vec![4.0, 12.0]);
        assert_eq!(downsample_backward(&[2.0, 4.0], 4), vec![1.0, 1.0, 2.0, 2.0]);
    }

    #[test]
    fn timestep_embedding_at_zero() {
        let e = timestep_embedding(0, 8);
        assert_eq!(e, vec![0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0]);
    }
}
