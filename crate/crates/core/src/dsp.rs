//! FFT-based signal utilities: band-limited resampling, brick-wall low-pass,
//! spectral statistics, and log-mel spectrograms.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::{Error, Result};

fn spectrum(x: &[f64]) -> Vec<Complex<f64>> {
    let mut buf: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    FftPlanner::new().plan_fft_forward(buf.len()).process(&mut buf);
    buf
}

fn inverse_real(mut buf: Vec<Complex<f64>>) -> Vec<f64> {
    let n = buf.len();
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.into_iter().map(|c| c.re * scale).collect()
}

/// Resamples by zero-padding or truncating the spectrum of the whole signal.
///
/// The output length is `len · to / from`, which must be an integer. The
/// signal is treated as periodic; content at or above the lower Nyquist
/// frequency is dropped when downsampling.
pub fn resample(x: &[f64], from: u32, to: u32) -> Result<Vec<f64>> {
    if from == to {
        return Ok(x.to_vec());
    }
    let n = x.len();
    let num = n as u64 * to as u64;
    if !num.is_multiple_of(from as u64) {
        return Err(Error::InvalidArgument(format!(
            "cannot resample {n} samples from {from} Hz to {to} Hz without a fractional length"
        )));
    }
    let m = (num / from as u64) as usize;
    if n == 0 {
        return Ok(Vec::new());
    }
    let spec = spectrum(x);
    let mut out = vec![Complex::new(0.0, 0.0); m];
    let small = n.min(m);
    let half = small.div_ceil(2); // bins 0..half are strictly below Nyquist
    out[0] = spec[0];
    for k in 1..half {
        out[k] = spec[k];
        out[m - k] = spec[n - k];
    }
    if small.is_multiple_of(2) && n < m {
        // Split the source Nyquist bin between the two mirrored positions.
        let v = spec[n / 2] * 0.5;
        out[n / 2] = v;
        out[m - n / 2] = v;
    }
    let scale = m as f64 / n as f64;
    Ok(inverse_real(out).into_iter().map(|v| v * scale).collect())
}

/// Zeroes every spectral bin at or above `cutoff_hz`.
pub fn lowpass(x: &[f64], sample_rate: u32, cutoff_hz: f64) -> Vec<f64> {
    let n = x.len();
    if n == 0 {
        return Vec::new();
    }
    let mut spec = spectrum(x);
    let bin_hz = sample_rate as f64 / n as f64;
    for k in 0..n {
        let f = k.min(n - k) as f64 * bin_hz;
        if f >= cutoff_hz {
            spec[k] = Complex::new(0.0, 0.0);
        }
    }
    inverse_real(spec)
}

/// One-sided magnitude spectrum of the whole signal, with bin frequencies.
pub fn magnitude_spectrum(x: &[f64], sample_rate: u32) -> (Vec<f64>, Vec<f64>) {
    let n = x.len();
    let spec = spectrum(x);
    let bins = n / 2 + 1;
    let freqs = (0..bins).map(|k| k as f64 * sample_rate as f64 / n as f64).collect();
    let mags = spec[..bins].iter().map(|c| c.norm()).collect();
    (freqs, mags)
}

/// Magnitude-weighted mean frequency of the whole-signal spectrum, in Hz.
pub fn spectral_centroid(x: &[f64], sample_rate: u32) -> f64 {
    let (freqs, mags) = magnitude_spectrum(x, sample_rate);
    let total: f64 = mags.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    freqs.iter().zip(&mags).map(|(f, m)| f * m).sum::<f64>() / total
}

/// Fraction of spectral energy inside `[lo, hi)` Hz.
pub fn band_energy_ratio(x: &[f64], sample_rate: u32, lo: f64, hi: f64) -> f64 {
    let (freqs, mags) = magnitude_spectrum(x, sample_rate);
    let total: f64 = mags.iter().map(|m| m * m).sum();
    if total == 0.0 {
        return 0.0;
    }
    let band: f64 = freqs
        .iter()
        .zip(&mags)
        .filter(|(f, _)| **f >= lo && **f < hi)
        .map(|(_, m)| m * m)
        .sum();
    band / total
}

pub fn snr_db(reference: &[f64], estimate: &[f64]) -> f64 {
    let signal: f64 = reference.iter().map(|v| v * v).sum();
    let noise: f64 = reference.iter().zip(estimate).map(|(a, b)| (a - b) * (a - b)).sum();
    if noise == 0.0 {
        return f64::INFINITY;
    }
    10.0 * (signal / noise).log10()
}

pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos())
        .collect()
}

fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Log-mel spectrogram extractor (HTK mel scale, triangular filters, Hann
/// window, no centering).
#[derive(Clone)]
pub struct MelSpectrogram {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub floor: f64,
    window: Vec<f64>,
    filters: Vec<Vec<(usize, f64)>>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MelSpectrogram {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MelSpectrogram")
            .field("sample_rate", &self.sample_rate)
            .field("n_fft", &self.n_fft)
            .field("hop", &self.hop)
            .field("n_mels", &self.n_mels)
            .finish()
    }
}

impl MelSpectrogram {
    pub fn new(sample_rate: u32, n_fft: usize, hop: usize, n_mels: usize, floor: f64) -> Self {
        let bins = n_fft / 2 + 1;
        let f_max = sample_rate as f64 / 2.0;
        let m_max = hz_to_mel(f_max);
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(m_max * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;
        let filters = (0..n_mels)
            .map(|m| {
                let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
                (0..bins)
                    .filter_map(|k| {
                        let f = k as f64 * bin_hz;
                        let w = if f > lo && f <= mid {
                            (f - lo) / (mid - lo)
                        } else if f > mid && f < hi {
                            (hi - f) / (hi - mid)
                        } else {
                            0.0
                        };
                        (w > 0.0).then_some((k, w))
                    })
                    .collect()
            })
            .collect();
        MelSpectrogram {
            sample_rate,
            n_fft,
            hop,
            n_mels,
            floor,
            window: hann(n_fft),
            filters,
            fft: FftPlanner::new().plan_fft_forward(n_fft),
        }
    }

    pub fn frame_count(&self, samples: usize) -> usize {
        if samples < self.n_fft {
            0
        } else {
            1 + (samples - self.n_fft) / self.hop
        }
    }

    /// Log mel power, frame-major: `out[frame][band]`.
    pub fn log_mel(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        let frames = self.frame_count(x.len());
        if frames == 0 {
            return Err(Error::TooShort(format!(
                "{} samples is shorter than one {}-point analysis window",
                x.len(),
                self.n_fft
            )));
        }
        let mut buf = vec![Complex::new(0.0, 0.0); self.n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; self.n_fft / 2 + 1];
        let mut out = Vec::with_capacity(frames);
        for f in 0..frames {
            let start = f * self.hop;
            for (i, b) in buf.iter_mut().enumerate() {
                *b = Complex::new(x[start + i] * self.window[i], 0.0);
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            let row = self
                .filters
                .iter()
                .map(|filt| {
                    let e: f64 = filt.iter().map(|&(k, w)| w * power[k]).sum();
                    e.max(self.floor).ln()
                })
                .collect();
            out.push(row);
        }
        Ok(out)
    }
}
