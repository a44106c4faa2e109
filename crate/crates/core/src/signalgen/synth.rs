//! Parametric machine-sound recipes.
//!
//! Every clip is a sum of deterministic components driven by a
//! `ChaCha8Rng` seeded from the record seed, low-passed at [`LOWPASS_HZ`]
//! and scaled down only if its peak would exceed [`PEAK_LIMIT`].
//!
//! | machine    | normal signal                                                     | attributes used                 |
//! |------------|-------------------------------------------------------------------|---------------------------------|
//! | fan        | harmonic stack on f0 = 90 Hz × model factor, amps 0.12/k, + tilted noise (rms 0.05) | `model`          |
//! | bearing    | carriers 700 / 1650 Hz × location factor, 60 % AM at 0.5·krpm Hz, + noise (rms 0.04) | `velocity`, `location` |
//! | gearbox    | mesh = teeth × 6·V Hz, harmonics 0.1/k with ±shaft sidebands, + noise (rms 0.04) | `model`, `voltage`, `weight` |
//! | slide_rail | repeated 250→1200 Hz sweeps, period 0.6·1000/v s, + noise (rms 0.05) | `type`, `velocity`, `acceleration` |
//! | valve      | click bursts (1.5 kHz + 600 Hz) on a 0.5 s pattern cycle, + noise | `pattern`, `surroundings`       |
//!
//! Anomaly transforms, chosen by [`AnomalyKind`]:
//!
//! * frequency shift: the fundamental (or the mesh/sweep/carrier frequencies)
//!   is multiplied by `1 + shift`;
//! * impulses: Hann-windowed 3 ms bursts at a machine-specific rate;
//! * band noise: noise restricted to a machine-specific band.
//!
//! Per-machine strengths live in [`severity`]; they are deliberately uneven so
//! that detection difficulty differs between machine types.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use super::metadata::{AnomalyKind, Condition, MachineType, MetadataRecord};
use crate::{dsp, Error, Result};

/// All synthesized content sits below this frequency.
pub const LOWPASS_HZ: f64 = 4700.0;
pub const PEAK_LIMIT: f64 = 0.99;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub metadata: Option<MetadataRecord>,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        AudioClip { samples, sample_rate, metadata: None }
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.samples.iter().map(|&v| v as f64).collect()
    }
}

/// Anomaly strength per machine type.
#[derive(Debug, Clone, Copy)]
pub struct Severity {
    /// Relative frequency increase for [`AnomalyKind::FrequencyShift`].
    pub shift: f64,
    /// Peak amplitude of each impulse burst.
    pub impulse: f64,
    /// RMS of the added band noise.
    pub band_noise: f64,
}

pub fn severity(machine: MachineType) -> Severity {
    match machine {
        MachineType::Fan => Severity { shift: 0.12, impulse: 0.30, band_noise: 0.06 },
        MachineType::Gearbox => Severity { shift: 0.06, impulse: 0.14, band_noise: 0.03 },
        MachineType::Bearing => Severity { shift: 0.04, impulse: 0.09, band_noise: 0.02 },
        MachineType::SlideRail => Severity { shift: 0.03, impulse: 0.07, band_noise: 0.015 },
        MachineType::Valve => Severity { shift: 0.02, impulse: 0.05, band_noise: 0.010 },
    }
}

/// Attribute vocabulary per machine: `(key, values)` in caption order, and
/// the anomaly values the dataset builder draws from.
pub fn vocabulary(machine: MachineType) -> (Vec<(&'static str, Vec<&'static str>)>, Vec<&'static str>) {
    match machine {
        MachineType::Bearing => (
            vec![
                ("velocity", vec!["6 krpm", "12 krpm", "18 krpm", "24 krpm"]),
                ("location", vec!["A", "B", "C"]),
            ],
            vec!["axis damage", "contamination"],
        ),
        MachineType::Gearbox => (
            vec![
                ("model", vec!["A", "B"]),
                ("voltage", vec!["1.3 (V)", "1.8 (V)", "2.3 (V)"]),
                ("weight", vec!["0 (g)", "30 (g)", "60 (g)"]),
            ],
            vec!["damage type 1", "damage type 2"],
        ),
        MachineType::Fan => (vec![("model", vec!["", "A", "B"])], vec!["over voltage", "wing damage"]),
        MachineType::SlideRail => (
            vec![
                ("type", vec!["ball-type", "roller-type"]),
                ("velocity", vec!["500.0 (mm/s)", "1000.0 (mm/s)", "1500.0 (mm/s)"]),
                ("acceleration", vec!["0.1", "0.3", "0.7"]),
            ],
            vec!["damage", "contamination"],
        ),
        MachineType::Valve => (
            vec![("pattern", vec!["1", "2", "3"]), ("surroundings", vec!["open", "closed"])],
            vec!["contamination", "damage"],
        ),
    }
}

struct Synth {
    n: usize,
    sr: f64,
    rng: ChaCha8Rng,
    out: Vec<f64>,
}

impl Synth {
    fn jitter(&mut self, spread: f64) -> f64 {
        1.0 + self.rng.random_range(-spread..spread)
    }

    fn phase(&mut self) -> f64 {
        self.rng.random_range(0.0..2.0 * PI)
    }

    fn sine(&mut self, freq: f64, amp: f64) {
        let phi = self.phase();
        let w = 2.0 * PI * freq / self.sr;
        for (i, o) in self.out.iter_mut().enumerate() {
            *o += amp * (w * i as f64 + phi).sin();
        }
    }

    /// Gaussian noise shaped in frequency: flat in `[lo, hi)` with a gentle
    /// `1/sqrt(1 + f/500)^tilt` roll-off, scaled to `rms`.
    fn noise(&mut self, rms: f64, lo: f64, hi: f64, tilt: f64) {
        let n = self.n;
        let mut spec = vec![Complex::new(0.0, 0.0); n];
        for k in 1..n / 2 {
            let f = k as f64 * self.sr / n as f64;
            let re: f64 = self.rng.sample(StandardNormal);
            let im: f64 = self.rng.sample(StandardNormal);
            if f >= lo && f < hi {
                let g = (1.0 + f / 500.0).powf(-0.5 * tilt);
                spec[k] = Complex::new(re * g, im * g);
                spec[n - k] = spec[k].conj();
            }
        }
        FftPlanner::new().plan_fft_inverse(n).process(&mut spec);
        let sig: Vec<f64> = spec.iter().map(|c| c.re).collect();
        let cur = (sig.iter().map(|v| v * v).sum::<f64>() / n as f64).sqrt();
        if cur > 0.0 {
            for (o, s) in self.out.iter_mut().zip(&sig) {
                *o += s * rms / cur;
            }
        }
    }

    /// Hann-windowed sinusoidal burst centred at `t` seconds.
    fn burst(&mut self, t: f64, freq: f64, dur: f64, amp: f64) {
        let len = (dur * self.sr) as usize;
        let start = (t * self.sr) as isize - len as isize / 2;
        let phi = self.phase();
        for j in 0..len {
            let idx = start + j as isize;
            if idx < 0 || idx as usize >= self.n {
                continue;
            }
            let w = 0.5 - 0.5 * (2.0 * PI * j as f64 / len as f64).cos();
            self.out[idx as usize] += amp * w * (2.0 * PI * freq * j as f64 / self.sr + phi).sin();
        }
    }

    fn impulse_train(&mut self, rate: f64, freq: f64, amp: f64) {
        let period = 1.0 / rate;
        let mut t = self.rng.random_range(0.0..period);
        let total = self.n as f64 / self.sr;
        while t < total {
            let a = amp * self.jitter(0.15);
            self.burst(t, freq, 0.003, a);
            t += period * self.jitter(0.03);
        }
    }
}

fn factor(value: Option<&str>, table: &[(&str, f64)]) -> f64 {
    value
        .and_then(|v| table.iter().find(|(k, _)| *k == v).map(|(_, f)| *f))
        .unwrap_or(1.0)
}

/// Renders one clip. Deterministic in `(metadata, duration, sample_rate)`.
pub fn synthesize(metadata: &MetadataRecord, duration: f64, sample_rate: u32) -> Result<AudioClip> {
    if !(duration > 0.0) {
        return Err(Error::InvalidArgument(format!("duration must be positive, got {duration}")));
    }
    if sample_rate != 16000 && sample_rate != 24000 {
        return Err(Error::InvalidArgument(format!("sample rate must be 16000 or 24000, got {sample_rate}")));
    }
    metadata.validate()?;
    let exact = duration * sample_rate as f64;
    let n = exact.round() as usize;
    if (exact - n as f64).abs() > 1e-6 {
        return Err(Error::InvalidArgument(format!(
            "duration {duration} s is not a whole number of samples at {sample_rate} Hz"
        )));
    }
    let anomaly = match metadata.condition {
        Condition::Anomalous => {
            let value = metadata.anomaly().unwrap_or_default();
            Some(AnomalyKind::from_attribute(metadata.machine, value)?)
        }
        Condition::Normal => None,
    };
    let sev = severity(metadata.machine);
    let mut s = Synth {
        n,
        sr: sample_rate as f64,
        rng: ChaCha8Rng::seed_from_u64(metadata.seed),
        out: vec![0.0; n],
    };
    let shift = if anomaly == Some(AnomalyKind::FrequencyShift) { 1.0 + sev.shift } else { 1.0 };

    match metadata.machine {
        MachineType::Fan => {
            let f0 = 90.0 * factor(metadata.get("model"), &[("A", 1.1), ("B", 1.2)]) * s.jitter(0.02) * shift;
            for k in 1..=20 {
                let f = k as f64 * f0;
                if f >= LOWPASS_HZ - 200.0 {
                    break;
                }
                let a = 0.12 / k as f64 * s.jitter(0.1);
                s.sine(f, a);
            }
            s.noise(0.05, 50.0, LOWPASS_HZ, 1.0);
            match anomaly {
                Some(AnomalyKind::Impulses) => s.impulse_train(f0 / 4.0, 2500.0, sev.impulse),
                Some(AnomalyKind::BandNoise) => s.noise(sev.band_noise, 1500.0, 3000.0, 0.0),
                _ => {}
            }
        }
        MachineType::Bearing => {
            let v = metadata.numeric("velocity").unwrap_or(12.0);
            let fm = 0.5 * v * s.jitter(0.02);
            let loc = factor(metadata.get("location"), &[("B", 1.07), ("C", 1.14)]);
            for (carrier, amp) in [(700.0, 0.12), (1650.0, 0.08)] {
                let c = carrier * loc * s.jitter(0.02) * shift;
                let (phi_c, phi_m) = (s.phase(), s.phase());
                let (wc, wm) = (2.0 * PI * c / s.sr, 2.0 * PI * fm / s.sr);
                for (i, o) in s.out.iter_mut().enumerate() {
                    let t = i as f64;
                    *o += amp * (1.0 + 0.6 * (wm * t + phi_m).sin()) * (wc * t + phi_c).sin();
                }
            }
            s.noise(0.04, 50.0, LOWPASS_HZ, 1.0);
            match anomaly {
                Some(AnomalyKind::Impulses) => s.impulse_train(3.1 * fm, 3000.0, sev.impulse),
                Some(AnomalyKind::BandNoise) => s.noise(sev.band_noise, 2000.0, 3500.0, 0.0),
                _ => {}
            }
        }
        MachineType::Gearbox => {
            let volts = metadata.numeric("voltage").unwrap_or(1.8);
            let weight = metadata.numeric("weight").unwrap_or(0.0);
            let teeth = if metadata.get("model") == Some("B") { 30.0 } else { 24.0 };
            let shaft = 6.0 * volts * s.jitter(0.02) * shift;
            let mesh = teeth * shaft;
            for k in 1..=5 {
                let f = k as f64 * mesh;
                if f + shaft >= LOWPASS_HZ - 200.0 {
                    break;
                }
                let amp = 0.1 / k as f64 * s.jitter(0.1);
                s.sine(f, amp);
                let side = 0.02 * (1.0 + weight / 60.0);
                s.sine(f - shaft, side);
                s.sine(f + shaft, side);
            }
            s.noise(0.04, 50.0, LOWPASS_HZ, 1.0);
            match anomaly {
                Some(AnomalyKind::Impulses) => s.impulse_train(shaft, 2200.0, sev.impulse),
                Some(AnomalyKind::BandNoise) => s.noise(sev.band_noise, 1800.0, 3200.0, 0.0),
                _ => {}
            }
        }
        MachineType::SlideRail => {
            let v = metadata.numeric("velocity").unwrap_or(1000.0);
            let accel = metadata.numeric("acceleration").unwrap_or(0.3);
            let period = 0.6 * 1000.0 / v * s.jitter(0.03);
            let (lo, hi) = (250.0 * shift, 1200.0 * shift);
            let second = if metadata.get("type") == Some("roller-type") { 3.0 } else { 2.0 };
            let offset = s.rng.random_range(0.0..period);
            let mut phase = s.phase();
            for i in 0..n {
                let t = i as f64 / s.sr + offset;
                let tau = (t % period) / period;
                let f = lo + (hi - lo) * tau.powf(1.0 + accel);
                phase += 2.0 * PI * f / s.sr;
                let env = (PI * tau).sin();
                s.out[i] += env * (0.15 * phase.sin() + 0.05 * (second * phase).sin());
            }
            s.noise(0.05, 50.0, LOWPASS_HZ, 1.0);
            match anomaly {
                Some(AnomalyKind::Impulses) => {
                    let mut k = 0.0;
                    loop {
                        let t = (k + 0.3) * period - offset;
                        if t >= n as f64 / s.sr {
                            break;
                        }
                        if t >= 0.0 {
                            s.burst(t, 2800.0, 0.003, sev.impulse);
                            s.burst(t + 0.02, 2800.0, 0.003, sev.impulse * 0.6);
                        }
                        k += 1.0;
                    }
                }
                Some(AnomalyKind::BandNoise) => s.noise(sev.band_noise, 2000.0, 3600.0, 0.0),
                _ => {}
            }
        }
        MachineType::Valve => {
            let pattern: &[f64] = match metadata.get("pattern") {
                Some("2") => &[0.0, 0.2, 0.3],
                Some("3") => &[0.0, 0.07, 0.14, 0.33],
                _ => &[0.0, 0.12],
            };
            let cycle = 0.5;
            let total = n as f64 / s.sr;
            let offset = s.rng.random_range(0.0..cycle);
            let mut start = -offset;
            while start < total {
                for &p in pattern {
                    let t = start + p + s.rng.random_range(-0.002..0.002);
                    let a = 0.3 * s.jitter(0.1);
                    s.burst(t, 1500.0 * shift, 0.005, a);
                    s.burst(t, 600.0 * shift, 0.008, 0.5 * a);
                }
                start += cycle;
            }
            let bg = if metadata.get("surroundings") == Some("open") { 0.03 } else { 0.015 };
            s.noise(bg, 50.0, LOWPASS_HZ, 1.0);
            match anomaly {
                Some(AnomalyKind::BandNoise) => s.noise(sev.band_noise, 1000.0, 3000.0, 0.0),
                Some(AnomalyKind::Impulses) => {
                    let count = (total * 6.0).ceil() as usize;
                    for _ in 0..count {
                        let t = s.rng.random_range(0.0..total);
                        s.burst(t, 2400.0, 0.003, sev.impulse);
                    }
                }
                _ => {}
            }
        }
    }

    let mut y = dsp::lowpass(&s.out, sample_rate, LOWPASS_HZ);
    let peak = y.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > PEAK_LIMIT {
        let g = PEAK_LIMIT / peak;
        y.iter_mut().for_each(|v| *v *= g);
    }
    Ok(AudioClip {
        samples: y.into_iter().map(|v| v as f32).collect(),
        sample_rate,
        metadata: Some(metadata.clone()),
    })
}
