//! Unsupervised anomalous-sound detection: a dense autoencoder over log-mel
//! context windows, trained per machine type on normal clips only and scored
//! by reconstruction error. Evaluation compares AUCs obtained with recorded
//! anomalies against AUCs obtained with generated ones.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::{self, MelSpectrogram};
use crate::linalg::{gemm_abt_acc, gemm_acc, gemm_atb_acc};
use crate::par::{self, ExecPolicy};
use crate::signalgen::{read_manifest, read_wav, resolve_path, AudioClip, Condition, MachineType, ManifestEntry};
use crate::{Error, Result, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorConfig {
    pub sample_rate: u32,
    pub n_fft: usize,
    pub hop: usize,
    pub bands: usize,
    pub context: usize,
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig {
            sample_rate: 16000,
            n_fft: 1024,
            hop: 512,
            bands: 64,
            context: 5,
            hidden: vec![128, 64, 8, 64, 128],
            epochs: 20,
            batch_size: 128,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl DetectorConfig {
    pub fn input_dim(&self) -> usize {
        self.bands * self.context
    }

    fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim()];
        d.extend(&self.hidden);
        d.push(self.input_dim());
        d
    }

    fn validate(&self) -> Result<()> {
        if self.bands == 0 || self.context == 0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("detector bands, context, epochs and batch_size must be positive".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("detector hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// Stacked log-mel (dB) context windows of a clip, `windows × (bands·context)`.
pub fn features(clip: &AudioClip, cfg: &DetectorConfig) -> Result<Vec<f32>> {
    let x = clip.to_f64();
    let x = if clip.sample_rate == cfg.sample_rate { x } else { dsp::resample(&x, clip.sample_rate, cfg.sample_rate)? };
    let mel = MelSpectrogram::new(cfg.sample_rate, cfg.n_fft, cfg.hop, cfg.bands, 1e-10);
    let frames = mel.log_mel(&x)?;
    if frames.len() < cfg.context {
        return Err(Error::TooShort(format!("{} frames is fewer than the {}-frame context", frames.len(), cfg.context)));
    }
    let db = 10.0 / std::f64::consts::LN_10;
    let windows = frames.len() - cfg.context + 1;
    let mut out = Vec::with_capacity(windows * cfg.input_dim());
    for w in 0..windows {
        for f in &frames[w..w + cfg.context] {
            out.extend(f.iter().map(|v| (db * v) as f32));
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub config: DetectorConfig,
    /// Per layer: weights `din × dout`, then biases.
    pub weights: Vec<Vec<f32>>,
    pub biases: Vec<Vec<f32>>,
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
    /// Mean training loss after each epoch.
    pub epoch_losses: Vec<f64>,
}

struct Forward {
    /// Activations per layer, input first.
    acts: Vec<Vec<f32>>,
}

impl DetectorModel {
    fn layers(&self) -> usize {
        self.weights.len()
    }

    fn forward(&self, x: &[f32], rows: usize) -> Forward {
        let dims = self.config.dims();
        let mut acts = vec![x.to_vec()];
        for l in 0..self.layers() {
            let (din, dout) = (dims[l], dims[l + 1]);
            let mut y: Vec<f32> = (0..rows).flat_map(|_| self.biases[l].iter().copied()).collect();
            gemm_acc(acts.last().unwrap(), &self.weights[l], &mut y, rows, din, dout);
            if l + 1 < self.layers() {
                y.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(y);
        }
        Forward { acts }
    }

    fn standardize(&self, x: &mut [f32]) {
        let d = self.config.input_dim();
        for row in x.chunks_mut(d) {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }

    /// Mean squared reconstruction error per window, in standardized units.
    pub fn window_errors(&self, clip: &AudioClip) -> Result<Vec<f64>> {
        let d = self.config.input_dim();
        let mut x = features(clip, &self.config)?;
        self.standardize(&mut x);
        let rows = x.len() / d;
        let f = self.forward(&x, rows);
        let y = f.acts.last().unwrap();
        Ok(x.chunks(d)
            .zip(y.chunks(d))
            .map(|(a, b)| a.iter().zip(b).map(|(p, q)| ((p - q) as f64).powi(2)).sum::<f64>() / d as f64)
            .collect())
    }
}

/// Anomaly score: mean reconstruction error over every window of the clip.
pub fn anomaly_score(model: &DetectorModel, clip: &AudioClip) -> Result<f64> {
    let e = model.window_errors(clip)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64)
}

pub fn train_detector(clips: &[AudioClip], config: &DetectorConfig) -> Result<DetectorModel> {
    config.validate()?;
    if clips.is_empty() {
        return Err(Error::MissingInputs("detector training set is empty".into()));
    }
    let d = config.input_dim();
    let mut x = Vec::new();
    for c in clips {
        x.extend(features(c, config)?);
    }
    let rows = x.len() / d;
    let mut mean = vec![0f64; d];
    for r in x.chunks(d) {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += *v as f64 / rows as f64);
    }
    let mut var = vec![0f64; d];
    for r in x.chunks(d) {
        var.iter_mut().zip(r).zip(&mean).for_each(|((s, v), m)| *s += (*v as f64 - m).powi(2) / rows as f64);
    }
    let std: Vec<f32> = var.iter().map(|v| if v.sqrt() > 1e-6 { v.sqrt() as f32 } else { 1.0 }).collect();
    let mean: Vec<f32> = mean.iter().map(|&m| m as f32).collect();

    let dims = config.dims();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for l in 0..dims.len() - 1 {
        let bound = (6.0 / dims[l] as f64).sqrt() as f32;
        weights.push((0..dims[l] * dims[l + 1]).map(|_| rng.random_range(-bound..bound)).collect::<Vec<f32>>());
        biases.push(vec![0f32; dims[l + 1]]);
    }
    let mut model = DetectorModel { config: config.clone(), weights, biases, mean, std, epoch_losses: Vec::new() };
    model.standardize(&mut x);

    let mut opt = AdamF32::new(&model, config.learning_rate as f32);
    let mut order: Vec<usize> = (0..rows).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let b = chunk.len();
            let xb: Vec<f32> = chunk.iter().flat_map(|&i| x[i * d..(i + 1) * d].iter().copied()).collect();
            let f = model.forward(&xb, b);
            let y = f.acts.last().unwrap();
            let scale = 2.0 / (b * d) as f32;
            let mut delta: Vec<f32> = y.iter().zip(&xb).map(|(p, q)| scale * (p - q)).collect();
            total += y.iter().zip(&xb).map(|(p, q)| ((p - q) as f64).powi(2)).sum::<f64>() / d as f64;
            let mut gw = Vec::with_capacity(model.layers());
            let mut gb = Vec::with_capacity(model.layers());
            for l in (0..model.layers()).rev() {
                let (din, dout) = (dims[l], dims[l + 1]);
                let mut w = vec![0f32; din * dout];
                gemm_atb_acc(&f.acts[l], &delta, &mut w, b, din, dout);
                let mut bias = vec![0f32; dout];
                for r in delta.chunks(dout) {
                    bias.iter_mut().zip(r).for_each(|(a, v)| *a += v);
                }
                if l > 0 {
                    let mut dx = vec![0f32; b * din];
                    gemm_abt_acc(&delta, &model.weights[l], &mut dx, b, din, dout);
                    // ReLU gate of the previous layer's output
                    dx.iter_mut().zip(&f.acts[l]).for_each(|(g, a)| {
                        if *a <= 0.0 {
                            *g = 0.0
                        }
                    });
                    delta = dx;
                }
                gw.push(w);
                gb.push(bias);
            }
            gw.reverse();
            gb.reverse();
            opt.step(&mut model, &gw, &gb);
        }
        model.epoch_losses.push(total / rows as f64);
    }
    Ok(model)
}

struct AdamF32 {
    lr: f32,
    t: i32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl AdamF32 {
    fn new(model: &DetectorModel, lr: f32) -> Self {
        let shapes: Vec<usize> = model.weights.iter().chain(&model.biases).map(|w| w.len()).collect();
        AdamF32 { lr, t: 0, m: shapes.iter().map(|&n| vec![0.0; n]).collect(), v: shapes.iter().map(|&n| vec![0.0; n]).collect() }
    }

    fn step(&mut self, model: &mut DetectorModel, gw: &[Vec<f32>], gb: &[Vec<f32>]) {
        self.t += 1;
        let (b1, b2, eps) = (0.9f32, 0.999f32, 1e-8f32);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let params = model.weights.iter_mut().chain(model.biases.iter_mut());
        let grads = gw.iter().chain(gb);
        for (((p, g), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                p[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
            }
        }
    }
}

/// Rank-based AUC (Mann–Whitney U), ties counted as one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::InvalidArgument("AUC needs both normal and anomalous clips".into()));
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    Ok((rank_sum - (pos * (pos + 1)) as f64 / 2.0) / (pos * neg) as f64)
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman correlation. When either side is constant the ranks carry no
/// ordering: two constant sides count as perfectly agreeing, one as 0.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::InvalidArgument("rank correlation needs two paired series of length >= 2".into()));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    Ok(match (saa == 0.0, sbb == 0.0) {
        (true, true) => 1.0,
        (true, false) | (false, true) => 0.0,
        _ => sab / (saa * sbb).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineAuc {
    pub auc_real: f64,
    pub auc_generated: f64,
    pub n_normal: usize,
    pub n_anomalous_real: usize,
    pub n_anomalous_generated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsdSummary {
    /// Unweighted mean of |AUC_real − AUC_generated| over machines, as a
    /// fraction (multiply by 100 for points).
    pub mean_abs_gap: f64,
    pub rank_correlation: f64,
    pub gap_definition: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsdReport {
    pub schema_version: u32,
    pub machines: BTreeMap<String, MachineAuc>,
    pub summary: AsdSummary,
}

pub struct DetectorSet {
    pub models: Vec<(MachineType, DetectorModel)>,
}

fn load_clips(manifest: &Path, entries: &[&ManifestEntry], policy: ExecPolicy) -> Result<Vec<AudioClip>> {
    par::try_map(policy, entries, |e| {
        let p = resolve_path(manifest, e).ok_or_else(|| {
            Error::MissingInputs(format!("{}: {} {} entry has no audio", manifest.display(), e.machine, e.condition.name()))
        })?;
        read_wav(&p)
    })
}

/// Trains one detector per machine type found among the manifest's normal
/// clips. Anomalous entries are filtered out before any audio is read.
pub fn train_detectors(train_manifest: &Path, config: &DetectorConfig, policy: ExecPolicy) -> Result<DetectorSet> {
    let entries = read_manifest(train_manifest)?;
    let machines: Vec<MachineType> =
        MachineType::ALL.iter().copied().filter(|m| entries.iter().any(|e| e.machine == *m && e.condition == Condition::Normal)).collect();
    if machines.is_empty() {
        return Err(Error::MissingInputs(format!("{} has no normal clips", train_manifest.display())));
    }
    let models = par::try_map(policy, &machines, |&m| -> Result<(MachineType, DetectorModel)> {
        let normals: Vec<&ManifestEntry> =
            entries.iter().filter(|e| e.machine == m && e.condition == Condition::Normal && e.path.is_some()).collect();
        let clips = load_clips(train_manifest, &normals, ExecPolicy::Sequential)?;
        Ok((m, train_detector(&clips, &DetectorConfig { seed: config.seed ^ m.index() as u64, ..config.clone() })?))
    })?;
    Ok(DetectorSet { models })
}

pub fn detect(model: &DetectorModel, manifest: &Path, entries: &[&ManifestEntry], policy: ExecPolicy) -> Result<DetectionResult> {
    let clips = load_clips(manifest, entries, policy)?;
    let scores = par::try_map(policy, &clips, |c| anomaly_score(model, c))?;
    let labels: Vec<bool> = entries.iter().map(|e| e.condition == Condition::Anomalous).collect();
    let auc = auc(&scores, &labels)?;
    Ok(DetectionResult { scores, labels, auc })
}

/// Per machine, AUC against evaluation set A (recorded anomalies) and set B
/// (generated anomalies), plus the gap summary.
pub fn evaluate_asd(
    detectors: &DetectorSet,
    manifest_a: &Path,
    manifest_b: &Path,
    policy: ExecPolicy,
) -> Result<(AsdReport, Vec<(DetectionResult, DetectionResult)>)> {
    let a = read_manifest(manifest_a)?;
    let b = read_manifest(manifest_b)?;
    let mut machines = BTreeMap::new();
    let mut results = Vec::new();
    let (mut ra, mut rb) = (Vec::new(), Vec::new());
    for (m, model) in &detectors.models {
        let sel = |v: &'_ [ManifestEntry]| -> Vec<usize> { (0..v.len()).filter(|&i| v[i].machine == *m).collect() };
        let (ia, ib) = (sel(&a), sel(&b));
        for (idx, path) in [(&ia, manifest_a), (&ib, manifest_b)] {
            if idx.is_empty() {
                return Err(Error::MissingInputs(format!("{} has no {m} clips", path.display())));
            }
        }
        let ea: Vec<&ManifestEntry> = ia.iter().map(|&i| &a[i]).collect();
        let eb: Vec<&ManifestEntry> = ib.iter().map(|&i| &b[i]).collect();
        let da = detect(model, manifest_a, &ea, policy)?;
        let db = detect(model, manifest_b, &eb, policy)?;
        let count = |d: &DetectionResult, anom: bool| d.labels.iter().filter(|&&l| l == anom).count();
        machines.insert(
            m.name().to_string(),
            MachineAuc {
                auc_real: da.auc,
                auc_generated: db.auc,
                n_normal: count(&da, false),
                n_anomalous_real: count(&da, true),
                n_anomalous_generated: count(&db, true),
            },
        );
        ra.push(da.auc);
        rb.push(db.auc);
        results.push((da, db));
    }
    let gap = ra.iter().zip(&rb).map(|(x, y)| (x - y).abs()).sum::<f64>() / ra.len() as f64;
    let rank_correlation = if ra.len() >= 2 { spearman(&ra, &rb)? } else { 1.0 };
    let summary = AsdSummary {
        mean_abs_gap: gap,
        rank_correlation,
        gap_definition: "unweighted mean over machine types of |AUC(real anomalies) - AUC(generated anomalies)|".into(),
    };
    Ok((AsdReport { schema_version: SCHEMA_VERSION, machines, summary }, results))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signalgen::{synthesize, MetadataRecord};

    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (i, &li) in labels.iter().enumerate() {
            for (j, &lj) in labels.iter().enumerate() {
                if li && !lj {
                    den += 1.0;
                    num += if scores[i] > scores[j] { 1.0 } else if scores[i] == scores[j] { 0.5 } else { 0.0 };
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_oracles() {
        let labels = [false, false, true, true];
        assert_eq!(auc(&[1.0, 2.0, 3.0, 4.0], &labels).unwrap(), 1.0);
        assert_eq!(auc(&[1.0, 3.0, 2.0, 4.0], &labels).unwrap(), 0.75);
        assert_eq!(brute_auc(&[1.0, 3.0, 2.0, 4.0], &labels), 0.75);
        assert_eq!(auc(&[5.0; 4], &labels).unwrap(), 0.5);
        assert!(auc(&[1.0, 2.0], &[true, true]).is_err());
    }

    #[test]
    fn auc_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let n = rng.random_range(4..30);
            let scores: Vec<f64> = (0..n).map(|_| (rng.random_range(0..8) as f64) * 0.5).collect();
            let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
            labels[0] = true;
            labels[1] = false;
            let a = auc(&scores, &labels).unwrap();
            assert!((a - brute_auc(&scores, &labels)).abs() < 1e-12);
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            assert_eq!(a + auc(&neg, &labels).unwrap(), 1.0);
            let ex: Vec<f64> = scores.iter().map(|s| s.exp()).collect();
            let aff: Vec<f64> = scores.iter().map(|s| 3.0 * s - 7.0).collect();
            assert_eq!(auc(&ex, &labels).unwrap(), a);
            assert_eq!(auc(&aff, &labels).unwrap(), a);
        }
    }

    #[test]
    fn spearman_cases() {
        assert_eq!(spearman(&[0.1, 0.5, 0.3], &[1.0, 3.0, 2.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[0.1, 0.5, 0.3], &[3.0, 1.0, 2.0]).unwrap(), -1.0);
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(spearman(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(average_ranks(&[2.0, 1.0, 2.0]), vec![2.5, 1.0, 2.5]);
    }

    fn clips(cond: Condition, n: usize, seed: u64) -> Vec<AudioClip> {
        (0..n)
            .map(|i| {
                let attrs: &[(&str, &str)] = if cond == Condition::Normal { &[] } else { &[("anomaly", "wing damage")] };
                let r = MetadataRecord::new(MachineType::Fan, cond, attrs, seed + i as u64).unwrap();
                synthesize(&r, 1.0, 16000).unwrap()
            })
            .collect()
    }

    #[test]
    fn detector_learns_and_is_deterministic() {
        let cfg = DetectorConfig { epochs: 10, batch_size: 32, ..Default::default() };
        let train = clips(Condition::Normal, 6, 10);
        let m = train_detector(&train, &cfg).unwrap();
        assert!(m.epoch_losses[9] < m.epoch_losses[0], "{:?}", m.epoch_losses);
        assert_eq!(m, train_detector(&train, &cfg).unwrap());
        let s = anomaly_score(&m, &train[0]).unwrap();
        assert!(s >= 0.0);
        assert!(train_detector(&[], &cfg).is_err());
        assert!(anomaly_score(&m, &AudioClip::new(vec![0.0; 2000], 16000)).is_err());
    }

    #[test]
    fn identity_model_scores_zero() {
        let cfg = DetectorConfig { bands: 8, context: 2, hidden: vec![32], ..Default::default() };
        let d = cfg.input_dim();
        let h = 2 * d;
        // x = relu(x) - relu(-x), so a hidden layer twice the input width rebuilds x exactly
        let mut w1 = vec![0f32; d * h];
        let mut w2 = vec![0f32; h * d];
        for i in 0..d {
            w1[i * h + i] = 1.0;
            w1[i * h + i + d] = -1.0;
            w2[i * d + i] = 1.0;
            w2[(i + d) * d + i] = -1.0;
        }
        let m = DetectorModel {
            config: cfg,
            weights: vec![w1, w2],
            biases: vec![vec![0.0; h], vec![0.0; d]],
            mean: vec![0.0; d],
            std: vec![1.0; d],
            epoch_losses: vec![],
        };
        let c = &clips(Condition::Normal, 1, 3)[0];
        assert_eq!(anomaly_score(&m, c).unwrap(), 0.0);
    }
}
