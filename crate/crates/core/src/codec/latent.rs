use serde::{Deserialize, Serialize};

use super::mdct::LATENT_DIM;
use crate::{Error, Result};

pub const CHANNELS: usize = 16;
pub const CHANNEL_ROWS: usize = LATENT_DIM / CHANNELS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Layout {
    /// 128 rows × F frames.
    Flat,
    /// 16 channels × 8 rows × F frames.
    Diffusion,
}

/// Codec latent. Values are row-major over `[row][frame]` in the flat layout
/// and `[channel][row][frame]` in the diffusion layout; flat row `r` is
/// channel `r / 8`, row `r % 8`, so both layouts share one buffer order.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentTensor {
    pub layout: Layout,
    pub frames: usize,
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl LatentTensor {
    pub fn zeros_flat(frames: usize) -> Self {
        LatentTensor { layout: Layout::Flat, frames, values: vec![0.0; LATENT_DIM * frames], normalized: false }
    }

    pub fn flat(frames: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != LATENT_DIM * frames {
            return Err(Error::Shape(format!("expected {}×{frames} values, got {}", LATENT_DIM, values.len())));
        }
        Ok(LatentTensor { layout: Layout::Flat, frames, values, normalized: false })
    }

    pub fn diffusion(frames: usize, values: Vec<f64>, normalized: bool) -> Result<Self> {
        if values.len() != LATENT_DIM * frames {
            return Err(Error::Shape(format!(
                "expected {CHANNELS}×{CHANNEL_ROWS}×{frames} values, got {}",
                values.len()
            )));
        }
        Ok(LatentTensor { layout: Layout::Diffusion, frames, values, normalized })
    }

    /// `(rows, frames)` for flat, `(channels, rows, frames)` for diffusion.
    pub fn dims(&self) -> Vec<usize> {
        match self.layout {
            Layout::Flat => vec![LATENT_DIM, self.frames],
            Layout::Diffusion => vec![CHANNELS, CHANNEL_ROWS, self.frames],
        }
    }

    pub fn flat_at(&self, row: usize, frame: usize) -> f64 {
        self.values[row * self.frames + frame]
    }

    pub fn diffusion_at(&self, channel: usize, row: usize, frame: usize) -> f64 {
        self.values[(channel * CHANNEL_ROWS + row) * self.frames + frame]
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = CHANNEL_ROWS * self.frames;
        &self.values[c * n..(c + 1) * n]
    }

    /// Frame-major copy: `out[frame][row]`.
    pub fn frame_vectors(&self) -> Vec<f64> {
        let f = self.frames;
        let mut out = vec![0.0; self.values.len()];
        for r in 0..LATENT_DIM {
            for t in 0..f {
                out[t * LATENT_DIM + r] = self.values[r * f + t];
            }
        }
        out
    }

    pub fn from_frame_vectors(frames: usize, fv: &[f64]) -> Result<Self> {
        let mut values = vec![0.0; fv.len()];
        for t in 0..frames {
            for r in 0..LATENT_DIM {
                values[r * frames + t] = fv[t * LATENT_DIM + r];
            }
        }
        LatentTensor::flat(frames, values)
    }

    /// Flat → diffusion layout, normalizing each channel with `stats`.
    pub fn reshape_to_diffusion(&self, stats: &NormStats) -> Result<LatentTensor> {
        if self.layout != Layout::Flat {
            return Err(Error::Shape("reshape_to_diffusion expects a flat latent".into()));
        }
        stats.check()?;
        let mut values = self.values.clone();
        let n = CHANNEL_ROWS * self.frames;
        for c in 0..CHANNELS {
            let (m, s) = (stats.mean[c], stats.std[c]);
            for v in &mut values[c * n..(c + 1) * n] {
                *v = (*v - m) / s;
            }
        }
        LatentTensor::diffusion(self.frames, values, true)
    }

    /// Inverse of [`reshape_to_diffusion`](Self::reshape_to_diffusion).
    pub fn reshape_to_flat(&self, stats: &NormStats) -> Result<LatentTensor> {
        if self.layout != Layout::Diffusion {
            return Err(Error::Shape("reshape_to_flat expects a diffusion latent".into()));
        }
        stats.check()?;
        let mut values = self.values.clone();
        if self.normalized {
            let n = CHANNEL_ROWS * self.frames;
            for c in 0..CHANNELS {
                let (m, s) = (stats.mean[c], stats.std[c]);
                for v in &mut values[c * n..(c + 1) * n] {
                    *v = *v * s + m;
                }
            }
        }
        LatentTensor::flat(self.frames, values)
    }
}

/// Per-channel mean and standard deviation over a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats { mean: vec![0.0; CHANNELS], std: vec![1.0; CHANNELS] }
    }

    /// Population statistics per channel over every row and frame of every
    /// latent. Flat and diffusion latents are both accepted.
    pub fn compute<'a>(latents: impl IntoIterator<Item = &'a LatentTensor>) -> Result<Self> {
        let mut sum = [0.0; CHANNELS];
        let mut sq = [0.0; CHANNELS];
        let mut count = 0usize;
        let latents: Vec<&LatentTensor> = latents.into_iter().collect();
        for l in &latents {
            for c in 0..CHANNELS {
                sum[c] += l.channel(c).iter().sum::<f64>();
            }
            count += CHANNEL_ROWS * l.frames;
        }
        if count == 0 {
            return Err(Error::InvalidArgument("no latents to compute statistics over".into()));
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / count as f64).collect();
        for l in &latents {
            for c in 0..CHANNELS {
                sq[c] += l.channel(c).iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
            }
        }
        let std = sq
            .iter()
            .map(|s| {
                let v = (s / count as f64).sqrt();
                if v > 1e-12 { v } else { 1.0 }
            })
            .collect();
        Ok(NormStats { mean, std })
    }

    pub fn check(&self) -> Result<()> {
        if self.mean.len() != CHANNELS || self.std.len() != CHANNELS {
            return Err(Error::Shape(format!("normalization stats need {CHANNELS} entries")));
        }
        if self.mean.iter().chain(&self.std).any(|v| !v.is_finite()) || self.std.iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidArgument("normalization stats must be finite with positive std".into()));
        }
        Ok(())
    }
}
