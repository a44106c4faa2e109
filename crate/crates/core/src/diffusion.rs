//! DDPM noise schedule, closed-form forward noising, the ε-prediction loss and
//! ancestral sampling.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::captions::ConditionEmbedding;
use crate::codec::{LatentTensor, Layout, CHANNELS, CHANNEL_ROWS};
use crate::{Error, Result};

pub const DEFAULT_STEPS: usize = 1000;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;

/// Linear β schedule. Entry `i` of each vector belongs to step `timesteps[i]`;
/// for a full schedule `timesteps` is `1..=T`, a respaced schedule keeps the
/// original step numbers so the network sees the times it was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub timesteps: Vec<usize>,
    pub beta: Vec<f64>,
    pub alpha_bar: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidArgument("schedule needs T >= 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "beta bounds must satisfy 0 < start <= end < 1, got [{beta_start}, {beta_end}]"
        )));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut prod = 1.0;
    for b in &beta {
        prod *= 1.0 - b;
        alpha_bar.push(prod);
    }
    Ok(NoiseSchedule { steps, beta_start, beta_end, timesteps: (1..=steps).collect(), beta, alpha_bar })
}

impl Default for NoiseSchedule {
    fn default() -> Self {
        make_schedule(DEFAULT_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END).expect("default schedule")
    }
}

impl NoiseSchedule {
    pub fn len(&self) -> usize {
        self.timesteps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timesteps.is_empty()
    }

    /// ᾱ at original step `t` (1-based) of the full schedule.
    pub fn alpha_bar_at(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok(self.alpha_bar[t - 1])
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.len() || self.timesteps[t - 1] != t {
            return Err(Error::InvalidArgument(format!("step {t} outside [1, {}]", self.len())));
        }
        Ok(())
    }

    /// Evenly spaced subset of `n` steps ending at T, with betas recomputed
    /// so that the retained steps keep their ᾱ values.
    pub fn respaced(&self, n: usize) -> Result<NoiseSchedule> {
        if n == 0 || n > self.len() {
            return Err(Error::InvalidArgument(format!("cannot respace {} steps to {n}", self.len())));
        }
        if n == self.len() {
            return Ok(self.clone());
        }
        let picks: Vec<usize> = (1..=n).map(|i| ((i * self.len()) as f64 / n as f64).round() as usize).collect();
        let mut beta = Vec::with_capacity(n);
        let mut alpha_bar = Vec::with_capacity(n);
        let mut prev = 1.0;
        for &p in &picks {
            let ab = self.alpha_bar[p - 1];
            beta.push(1.0 - ab / prev);
            alpha_bar.push(ab);
            prev = ab;
        }
        let timesteps = picks.iter().map(|&p| self.timesteps[p - 1]).collect();
        Ok(NoiseSchedule { timesteps, beta, alpha_bar, ..self.clone() })
    }
}

/// ε_θ: anything that predicts the injected noise.
pub trait NoisePredictor {
    fn predict(&self, z_t: &LatentTensor, t: usize, condition: &ConditionEmbedding) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoisySample {
    pub z_t: LatentTensor,
    pub t: usize,
    pub eps: Vec<f64>,
}

pub fn standard_normal<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// z_t = √ᾱ_t·z0 + √(1−ᾱ_t)·ε with the given ε.
pub fn noise_with(z0: &LatentTensor, t: usize, schedule: &NoiseSchedule, eps: Vec<f64>) -> Result<NoisySample> {
    check_diffusion(z0)?;
    if eps.len() != z0.values.len() {
        return Err(Error::Shape(format!("noise of {} values for a latent of {}", eps.len(), z0.values.len())));
    }
    let ab = schedule.alpha_bar_at(t)?;
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let values = z0.values.iter().zip(&eps).map(|(z, e)| a * z + b * e).collect();
    Ok(NoisySample { z_t: LatentTensor { values, ..z0.clone() }, t, eps })
}

pub fn forward_noise<R: Rng>(z0: &LatentTensor, t: usize, schedule: &NoiseSchedule, rng: &mut R) -> Result<NoisySample> {
    schedule.check_t(t)?;
    let eps = standard_normal(z0.values.len(), rng);
    noise_with(z0, t, schedule, eps)
}

pub fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// ‖ε − ε_θ(z_t, t, c)‖² averaged over elements.
pub fn loss<R: Rng>(
    z0: &LatentTensor,
    t: usize,
    condition: &ConditionEmbedding,
    model: &impl NoisePredictor,
    schedule: &NoiseSchedule,
    rng: &mut R,
) -> Result<f64> {
    let s = forward_noise(z0, t, schedule, rng)?;
    let pred = model.predict(&s.z_t, t, condition)?;
    if pred.len() != s.eps.len() {
        return Err(Error::Shape(format!("prediction of {} values for {}", pred.len(), s.eps.len())));
    }
    Ok(mse(&s.eps, &pred))
}

fn check_diffusion(z: &LatentTensor) -> Result<()> {
    if z.layout != Layout::Diffusion {
        return Err(Error::Shape("diffusion operates on the 16×8×F layout".into()));
    }
    Ok(())
}

/// Ancestral sampling from z_T ~ N(0, I) over every entry of `schedule`.
pub fn sample<R: Rng>(
    condition: &ConditionEmbedding,
    model: &impl NoisePredictor,
    schedule: &NoiseSchedule,
    frames: usize,
    rng: &mut R,
) -> Result<LatentTensor> {
    if frames == 0 {
        return Err(Error::Shape("cannot sample zero frames".into()));
    }
    let n = CHANNELS * CHANNEL_ROWS * frames;
    let mut z = LatentTensor::diffusion(frames, standard_normal(n, rng), true)?;
    for i in (0..schedule.len()).rev() {
        let (beta, ab) = (schedule.beta[i], schedule.alpha_bar[i]);
        let eps = model.predict(&z, schedule.timesteps[i], condition)?;
        let c = beta / (1.0 - ab).sqrt();
        let inv = 1.0 / (1.0 - beta).sqrt();
        for (v, e) in z.values.iter_mut().zip(&eps) {
            *v = inv * (*v - c * e);
        }
        if i > 0 {
            let sigma = beta.sqrt();
            for v in z.values.iter_mut() {
                *v += sigma * rng.sample::<f64, _>(StandardNormal);
            }
        }
    }
    Ok(z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::captions::{encode_caption, Caption};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Zero;
    impl NoisePredictor for Zero {
        fn predict(&self, z: &LatentTensor, _: usize, _: &ConditionEmbedding) -> Result<Vec<f64>> {
            Ok(vec![0.0; z.values.len()])
        }
    }

    /// Returns the true noise by inverting the closed form around a known z0.
    struct Oracle<'a> {
        z0: &'a LatentTensor,
        schedule: &'a NoiseSchedule,
    }
    impl NoisePredictor for Oracle<'_> {
        fn predict(&self, z: &LatentTensor, t: usize, _: &ConditionEmbedding) -> Result<Vec<f64>> {
            let ab = self.schedule.alpha_bar_at(t)?;
            Ok(z.values.iter().zip(&self.z0.values).map(|(zt, z0)| (zt - ab.sqrt() * z0) / (1.0 - ab).sqrt()).collect())
        }
    }

    fn cond() -> ConditionEmbedding {
        encode_caption(&Caption { text: "a fan".into(), source: None })
    }

    fn latent(frames: usize, seed: u64) -> LatentTensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        LatentTensor::diffusion(frames, standard_normal(128 * frames, &mut rng), true).unwrap()
    }

    #[test]
    fn small_schedules() {
        let s = make_schedule(1, 0.5, 0.5).unwrap();
        assert_eq!(s.alpha_bar, vec![0.5]);
        let s = make_schedule(2, 0.1, 0.3).unwrap();
        assert!((s.alpha_bar[0] - 0.9).abs() < 1e-15);
        assert!((s.alpha_bar[1] - 0.63).abs() < 1e-15);
        assert!(make_schedule(0, 0.1, 0.2).is_err());
        assert!(make_schedule(10, 0.2, 0.1).is_err());
        assert!(make_schedule(10, 0.0, 0.1).is_err());
        assert!(make_schedule(10, 0.1, 1.0).is_err());
    }

    #[test]
    fn default_schedule() {
        let s = NoiseSchedule::default();
        // pinned from a 40-digit evaluation of the running product
        assert!((s.alpha_bar[999] - 4.035830e-5).abs() < 1e-11, "{}", s.alpha_bar[999]);
        assert!(s.alpha_bar[999] < 0.01);
        assert!(s.beta.windows(2).all(|w| w[1] > w[0]));
        assert!(s.alpha_bar.windows(2).all(|w| w[1] < w[0]));
        for &ab in &s.alpha_bar {
            assert!((ab.sqrt().powi(2) + (1.0 - ab).sqrt().powi(2) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn respacing_keeps_alpha_bar() {
        let s = make_schedule(100, 1e-4, 0.02).unwrap();
        let r = s.respaced(10).unwrap();
        assert_eq!(r.timesteps, (1..=10).map(|i| i * 10).collect::<Vec<_>>());
        for (i, &t) in r.timesteps.iter().enumerate() {
            assert_eq!(r.alpha_bar[i], s.alpha_bar[t - 1]);
        }
        let prod: f64 = r.beta.iter().map(|b| 1.0 - b).product();
        assert!((prod - s.alpha_bar[99]).abs() < 1e-12);
        assert!(s.respaced(0).is_err() && s.respaced(101).is_err());
        assert_eq!(s.respaced(100).unwrap(), s);
    }

    #[test]
    fn zero_noise_scales_signal() {
        let s = NoiseSchedule::default();
        let z0 = latent(4, 1);
        let n = noise_with(&z0, 500, &s, vec![0.0; z0.values.len()]).unwrap();
        let a = s.alpha_bar[499].sqrt();
        assert!(n.z_t.values.iter().zip(&z0.values).all(|(x, z)| *x == a * z));
        assert!(noise_with(&z0, 0, &s, vec![0.0; 512]).is_err());
        assert!(noise_with(&z0, 1001, &s, vec![0.0; 512]).is_err());
    }

    #[test]
    fn terminal_step_is_near_standard_normal() {
        let s = NoiseSchedule::default();
        let z0 = LatentTensor::diffusion(80, vec![3.0; 128 * 80], true).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = forward_noise(&z0, 1000, &s, &mut rng).unwrap();
        for c in 0..16 {
            let ch = n.z_t.channel(c);
            let m = ch.iter().sum::<f64>() / ch.len() as f64;
            assert!(m.abs() < 0.12, "channel {c} mean {m}");
        }
        let all = &n.z_t.values;
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let var = all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64;
        assert!(mean.abs() < 0.05 && (var - 1.0).abs() < 0.05, "mean {mean} var {var}");
        let mut again = ChaCha8Rng::seed_from_u64(2);
        assert_eq!(forward_noise(&z0, 1000, &s, &mut again).unwrap().eps, n.eps);
    }

    #[test]
    fn losses() {
        let s = NoiseSchedule::default();
        let c = cond();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for scale in [0.01, 1.0, 100.0] {
            let z0 = LatentTensor::diffusion(80, vec![scale; 128 * 80], true).unwrap();
            let l = loss(&z0, 400, &c, &Zero, &s, &mut rng).unwrap();
            assert!((l - 1.0).abs() < 0.05, "zero predictor loss {l}");
        }
        let z0 = latent(8, 4);
        let oracle = Oracle { z0: &z0, schedule: &s };
        for t in [1, 17, 999] {
            assert!(loss(&z0, t, &c, &oracle, &s, &mut rng).unwrap() < 1e-20);
        }
    }

    #[test]
    fn one_step_sampler() {
        let s = make_schedule(1, 0.3, 0.3).unwrap();
        let c = cond();
        let z = sample(&c, &Zero, &s, 2, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let z1 = standard_normal(256, &mut ChaCha8Rng::seed_from_u64(5));
        for (got, v) in z.values.iter().zip(&z1) {
            assert!((got - v / 0.7f64.sqrt()).abs() < 1e-14);
        }
        assert!(z.normalized && z.layout == Layout::Diffusion);
    }

    #[test]
    fn sampler_is_seeded() {
        let s = make_schedule(20, 1e-4, 0.2).unwrap();
        let c = cond();
        let a = sample(&c, &Zero, &s, 4, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let b = sample(&c, &Zero, &s, 4, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let d = sample(&c, &Zero, &s, 4, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, d);
    }
}
