//! Denoiser training on a prepared latent store, and checkpoints. Only ε_θ is
//! optimized; the codec codebooks and the caption encoder stay frozen.

mod container;
mod store;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use container::{read_container, write_container, Tensor, FORMAT_VERSION};
pub use store::{
    codebooks_from_tensors, codebook_tensors, load_codebooks, prepare_latents, save_codebooks, LatentStore,
    PrepareConfig, StoreRecord, CODEC_FILE, LATENTS_FILE, LATENTS_META, STORE_FILE,
};

use crate::captions::ConditionEmbedding;
use crate::codec::{CodebookSet, LatentTensor, NormStats, CHANNELS, CHANNEL_ROWS};
use crate::denoiser::{init_params, param_layout, DenoiserConfig, DenoiserParams, ForwardOptions};
use crate::diffusion::{make_schedule, mse, noise_with, standard_normal, NoiseSchedule};
use crate::par::{self, ExecPolicy};
use crate::{Error, Result, SCHEMA_VERSION};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MSNDCKPT";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            steps: crate::diffusion::DEFAULT_STEPS,
            beta_start: crate::diffusion::DEFAULT_BETA_START,
            beta_end: crate::diffusion::DEFAULT_BETA_END,
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        let s = make_schedule(self.steps, self.beta_start, self.beta_end)?;
        let end = s.alpha_bar[s.steps - 1];
        if end > 1e-2 {
            log::warn!("alpha_bar at t = T is {end:.3}; sampling from pure noise will be biased (scale the betas by 1000/T)");
        }
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    /// Training windows are random crops of this many frames.
    pub crop_frames: usize,
    pub checkpoint_interval: usize,
    pub schedule: ScheduleConfig,
    pub denoiser: DenoiserConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch_size: 8,
            learning_rate: 2e-4,
            seed: 0,
            crop_frames: 32,
            checkpoint_interval: 500,
            schedule: ScheduleConfig::default(),
            denoiser: DenoiserConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, frames: usize) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        self.denoiser.validate()?;
        let m = self.denoiser.frame_multiple();
        if self.crop_frames == 0 || !self.crop_frames.is_multiple_of(m) {
            return bad(format!("crop_frames {} must be a positive multiple of {m}", self.crop_frames));
        }
        if self.crop_frames > frames {
            return bad(format!("crop_frames {} exceeds the {frames} frames per clip", self.crop_frames));
        }
        self.schedule.build().map(|_| ())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: vec![0.0; n], v: vec![0.0; n] }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            params[i] -= self.lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        RngState { seed: rng.get_seed(), stream: rng.get_stream(), word_pos: rng.get_word_pos() }
    }

    pub fn restore(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos);
        rng
    }
}

/// Everything needed to resume training or to generate.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub params: DenoiserParams,
    pub schedule: NoiseSchedule,
    pub codebooks: CodebookSet,
    pub stats: NormStats,
    /// Latent frames per training clip.
    pub frames: usize,
    pub duration: f64,
    pub step: usize,
    pub rng: RngState,
    pub adam: Adam,
    pub losses: Vec<f64>,
    pub encoder: String,
    /// Store directory, relative to the checkpoint file.
    pub store: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    schema_version: u32,
    config: TrainConfig,
    frames: usize,
    duration: f64,
    step: usize,
    /// Hex-encoded ChaCha seed; the word position is a decimal string since
    /// it exceeds JSON number precision.
    rng_seed: String,
    rng_stream: u64,
    rng_word_pos: String,
    adam_t: u64,
    stats: NormStats,
    losses: Vec<f64>,
    encoder: String,
    store: Option<String>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn unhex(s: &str) -> Option<[u8; 32]> {
    if s.len() != 64 {
        return None;
    }
    let mut out = [0u8; 32];
    for (i, o) in out.iter_mut().enumerate() {
        *o = u8::from_str_radix(&s[2 * i..2 * i + 2], 16).ok()?;
    }
    Some(out)
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = CheckpointMeta {
            schema_version: SCHEMA_VERSION,
            config: self.config.clone(),
            frames: self.frames,
            duration: self.duration,
            step: self.step,
            rng_seed: hex(&self.rng.seed),
            rng_stream: self.rng.stream,
            rng_word_pos: self.rng.word_pos.to_string(),
            adam_t: self.adam.t,
            stats: self.stats.clone(),
            losses: self.losses.clone(),
            encoder: self.encoder.clone(),
            store: self.store.clone(),
        };
        let mut tensors: Vec<Tensor> = param_layout(&self.params.config)
            .into_iter()
            .map(|e| {
                let data = self.params.values[e.offset..e.offset + e.len()].to_vec();
                Tensor::new(format!("denoiser.{}", e.name), e.shape, data)
            })
            .collect();
        let n = self.params.values.len();
        tensors.push(Tensor::new("adam.m", vec![n], self.adam.m.clone()));
        tensors.push(Tensor::new("adam.v", vec![n], self.adam.v.clone()));
        tensors.extend(codebook_tensors(&self.codebooks));
        write_container(path, CHECKPOINT_MAGIC, serde_json::to_value(meta)?, &tensors)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let (meta, tensors) = read_container(path, CHECKPOINT_MAGIC)?;
        let meta: CheckpointMeta =
            serde_json::from_value(meta).map_err(|e| Error::Checkpoint(format!("{}: header: {e}", path.display())))?;
        let cfg = meta.config.denoiser;
        cfg.validate()?;
        let layout = param_layout(&cfg);
        let total: usize = layout.iter().map(|e| e.len()).sum();
        let mut values = vec![0.0; total];
        for e in &layout {
            let name = format!("denoiser.{}", e.name);
            let t = tensors
                .iter()
                .find(|t| t.name == name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape != e.shape {
                return Err(Error::Checkpoint(format!("tensor {name} has shape {:?}, expected {:?}", t.shape, e.shape)));
            }
            values[e.offset..e.offset + e.len()].copy_from_slice(&t.data);
        }
        let get = |name: &str| -> Result<Vec<f64>> {
            let t = tensors.iter().find(|t| t.name == name).ok_or_else(|| Error::Checkpoint(format!("missing {name}")))?;
            if t.data.len() != total {
                return Err(Error::Checkpoint(format!("{name} has {} values, expected {total}", t.data.len())));
            }
            Ok(t.data.clone())
        };
        let mut adam = Adam::new(total, meta.config.learning_rate);
        adam.t = meta.adam_t;
        adam.m = get("adam.m")?;
        adam.v = get("adam.v")?;
        let rng = RngState {
            seed: unhex(&meta.rng_seed).ok_or_else(|| Error::Checkpoint("bad rng seed".into()))?,
            stream: meta.rng_stream,
            word_pos: meta.rng_word_pos.parse().map_err(|_| Error::Checkpoint("bad rng word position".into()))?,
        };
        meta.stats.check()?;
        Ok(Checkpoint {
            schedule: meta.config.schedule.build()?,
            params: DenoiserParams { config: cfg, values },
            codebooks: codebooks_from_tensors(&tensors)?,
            stats: meta.stats,
            frames: meta.frames,
            duration: meta.duration,
            step: meta.step,
            rng,
            adam,
            losses: meta.losses,
            encoder: meta.encoder,
            store: meta.store,
            config: meta.config,
        })
    }
}

/// One training example drawn for a step.
struct Draw {
    record: usize,
    t: usize,
    offset: usize,
    eps: Vec<f64>,
}

pub struct Trainer<'a> {
    store: &'a LatentStore,
    embeddings: Vec<ConditionEmbedding>,
    pub checkpoint: Checkpoint,
    rng: ChaCha8Rng,
    policy: ExecPolicy,
}

impl<'a> Trainer<'a> {
    pub fn new(store: &'a LatentStore, config: TrainConfig, policy: ExecPolicy) -> Result<Self> {
        config.validate(store.frames)?;
        if store.latents.is_empty() {
            return Err(Error::MissingInputs("latent store is empty".into()));
        }
        let params = init_params(&config.denoiser, config.seed)?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7472_6169_6e00_0000);
        let checkpoint = Checkpoint {
            schedule: config.schedule.build()?,
            adam: Adam::new(params.values.len(), config.learning_rate),
            params,
            codebooks: store.codebooks.clone(),
            stats: store.stats.clone(),
            frames: store.frames,
            duration: store.duration,
            step: 0,
            rng: RngState::capture(&rng),
            losses: Vec::new(),
            encoder: "hash-v1".into(),
            store: None,
            config,
        };
        Ok(Self::build(store, checkpoint, rng, policy))
    }

    /// Continues from a checkpoint; `steps` may extend the original target.
    pub fn resume(store: &'a LatentStore, checkpoint: Checkpoint, steps: usize, policy: ExecPolicy) -> Result<Self> {
        let mut checkpoint = checkpoint;
        checkpoint.config.steps = steps;
        checkpoint.config.validate(store.frames)?;
        if checkpoint.stats != store.stats || checkpoint.frames != store.frames {
            return Err(Error::Checkpoint("checkpoint was trained on a different latent store".into()));
        }
        let rng = checkpoint.rng.restore();
        Ok(Self::build(store, checkpoint, rng, policy))
    }

    fn build(store: &'a LatentStore, checkpoint: Checkpoint, rng: ChaCha8Rng, policy: ExecPolicy) -> Self {
        let embeddings = (0..store.records.len()).map(|i| store.embedding(i)).collect();
        Trainer { store, embeddings, checkpoint, rng, policy }
    }

    pub fn done(&self) -> bool {
        self.checkpoint.step >= self.checkpoint.config.steps
    }

    /// One optimizer step; returns the batch loss.
    pub fn step(&mut self) -> Result<f64> {
        let cfg = &self.checkpoint.config;
        let (crop, steps, batch) = (cfg.crop_frames, cfg.schedule.steps, cfg.batch_size);
        let frames = self.store.frames;
        let n = CHANNELS * CHANNEL_ROWS * crop;
        let draws: Vec<Draw> = (0..batch)
            .map(|_| Draw {
                record: self.rng.random_range(0..self.store.latents.len()),
                t: self.rng.random_range(1..=steps),
                offset: self.rng.random_range(0..=frames - crop),
                eps: standard_normal(n, &mut self.rng),
            })
            .collect();
        let params = &self.checkpoint.params;
        let schedule = &self.checkpoint.schedule;
        let scale = 2.0 / (n * batch) as f64;
        let results = par::try_map(self.policy, &draws, |d| -> Result<(f64, Vec<f64>)> {
            let z0 = crop_latent(&self.store.latents[d.record], d.offset, crop)?;
            let s = noise_with(&z0, d.t, schedule, d.eps.clone())?;
            let (pred, trace) = params.forward_trace(&s.z_t, d.t, &self.embeddings[d.record], ForwardOptions::default())?;
            let loss = mse(&d.eps, &pred);
            let dout: Vec<f64> = pred.iter().zip(&d.eps).map(|(p, e)| scale * (p - e)).collect();
            Ok((loss, params.backward(&trace, &dout)?.params))
        })?;
        let mut grads = vec![0.0; params.values.len()];
        let mut loss = 0.0;
        for (l, g) in &results {
            loss += l / batch as f64;
            grads.iter_mut().zip(g).for_each(|(a, b)| *a += b);
        }
        let step = self.checkpoint.step + 1;
        if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step });
        }
        let ck = &mut self.checkpoint;
        ck.adam.step(&mut ck.params.values, &grads);
        ck.step = step;
        ck.losses.push(loss);
        ck.rng = RngState::capture(&self.rng);
        Ok(loss)
    }

    /// Steps until the configured count, calling `on_interval` after every
    /// `checkpoint_interval` steps and once at the end.
    pub fn run(&mut self, mut on_interval: impl FnMut(&Checkpoint) -> Result<()>) -> Result<&Checkpoint> {
        while !self.done() {
            self.step()?;
            let ck = &self.checkpoint;
            if ck.config.checkpoint_interval > 0 && ck.step.is_multiple_of(ck.config.checkpoint_interval) && !self.done() {
                on_interval(ck)?;
            }
        }
        on_interval(&self.checkpoint)?;
        Ok(&self.checkpoint)
    }
}

pub fn crop_latent(z: &LatentTensor, offset: usize, frames: usize) -> Result<LatentTensor> {
    if offset + frames > z.frames {
        return Err(Error::Shape(format!("crop {offset}+{frames} exceeds {} frames", z.frames)));
    }
    let mut values = Vec::with_capacity(CHANNELS * CHANNEL_ROWS * frames);
    for row in z.values.chunks(z.frames) {
        values.extend_from_slice(&row[offset..offset + frames]);
    }
    LatentTensor::diffusion(frames, values, z.normalized)
}

/// Pads the frame axis with zeros up to `frames`.
pub fn pad_latent(z: &LatentTensor, frames: usize) -> Result<LatentTensor> {
    if frames < z.frames {
        return Err(Error::Shape(format!("cannot pad {} frames down to {frames}", z.frames)));
    }
    let mut values = Vec::with_capacity(CHANNELS * CHANNEL_ROWS * frames);
    for row in z.values.chunks(z.frames) {
        values.extend_from_slice(row);
        values.extend(std::iter::repeat_n(0.0, frames - z.frames));
    }
    LatentTensor::diffusion(frames, values, z.normalized)
}

/// CSV of `(step, loss)`.
pub fn loss_csv(losses: &[f64]) -> String {
    let mut s = String::from("step,loss\n");
    for (i, l) in losses.iter().enumerate() {
        s.push_str(&format!("{},{l:?}\n", i + 1));
    }
    s
}

pub fn describe(ck: &Checkpoint) -> Value {
    json!({
        "step": ck.step,
        "params": ck.params.values.len(),
        "final_loss": ck.losses.last(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::KMeansParams;
    use crate::signalgen::{build_dataset, DatasetSpec, MachineType, MANIFEST_TRAIN};

    pub(crate) fn toy_store(dir: &Path, clips: usize) -> LatentStore {
        let spec = DatasetSpec {
            root_seed: 5,
            duration: 1.0,
            machines: vec![MachineType::Fan],
            train_normal: clips,
            train_anomalous: 0,
            eval_normal: 0,
            eval_anomalous: 0,
            ..DatasetSpec::desk()
        };
        build_dataset(&spec, dir, ExecPolicy::Parallel).unwrap();
        let cfg = PrepareConfig { bandwidth_kbps: 6.0, codebook_size: 16, kmeans: KMeansParams { iterations: 4, ..Default::default() } };
        prepare_latents(&dir.join(MANIFEST_TRAIN), &cfg, ExecPolicy::Parallel).unwrap()
    }

    fn small_config(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 2,
            learning_rate: 1e-3,
            seed: 3,
            crop_frames: 16,
            checkpoint_interval: 0,
            schedule: ScheduleConfig { steps: 50, ..Default::default() },
            denoiser: DenoiserConfig { base_width: 8, depth: 1, attn_dim: 8, heads: 2 },
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut a = Adam::new(2, 0.1);
        let mut p = vec![1.0, -1.0];
        a.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.9).abs() < 1e-8 && (p[1] + 0.9).abs() < 1e-8);
    }

    #[test]
    fn config_validation() {
        let c = small_config(0);
        assert!(c.validate(75).is_err());
        assert!(TrainConfig { batch_size: 0, ..small_config(1) }.validate(75).is_err());
        assert!(TrainConfig { crop_frames: 15, ..small_config(1) }.validate(75).is_err());
        assert!(TrainConfig { crop_frames: 80, ..small_config(1) }.validate(75).is_err());
        assert!(small_config(1).validate(75).is_ok());
    }

    #[test]
    fn crop_and_pad() {
        let z = LatentTensor::diffusion(3, (0..384).map(|v| v as f64).collect(), true).unwrap();
        let c = crop_latent(&z, 1, 2).unwrap();
        assert_eq!(&c.values[..4], &[1.0, 2.0, 4.0, 5.0]);
        let p = pad_latent(&z, 4).unwrap();
        assert_eq!(&p.values[..8], &[0.0, 1.0, 2.0, 0.0, 3.0, 4.0, 5.0, 0.0]);
        assert!(crop_latent(&z, 2, 2).is_err());
    }

    #[test]
    fn store_round_trip_and_statistics() {
        let dir = tempfile::tempdir().unwrap();
        let store = toy_store(dir.path(), 4);
        assert_eq!(store.latents.len(), 4);
        assert!(store.latents.iter().all(|l| l.dims() == vec![16, 8, 75]));
        store.save(&dir.path().join("store")).unwrap();
        let back = LatentStore::load(&dir.path().join("store")).unwrap();
        assert_eq!(back.records, store.records);
        assert_eq!(back.codebooks, store.codebooks);
        let again = NormStats::compute(&back.latents).unwrap();
        for c in 0..16 {
            assert!(again.mean[c].abs() < 1e-6, "channel {c} mean {}", again.mean[c]);
            assert!((again.std[c] - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn resume_matches_uninterrupted_and_checkpoints_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        let store = toy_store(dir.path(), 3);
        let books_before = store.codebooks.clone();

        let mut full = Trainer::new(&store, small_config(6), ExecPolicy::Parallel).unwrap();
        full.run(|_| Ok(())).unwrap();

        let mut first = Trainer::new(&store, small_config(3), ExecPolicy::Sequential).unwrap();
        first.run(|_| Ok(())).unwrap();
        let p = dir.path().join("ck.bin");
        first.checkpoint.save(&p).unwrap();
        let loaded = Checkpoint::load(&p).unwrap();
        assert_eq!(loaded, first.checkpoint);
        let p2 = dir.path().join("ck2.bin");
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), std::fs::read(&p2).unwrap());

        let mut rest = Trainer::resume(&store, loaded, 6, ExecPolicy::Parallel).unwrap();
        rest.run(|_| Ok(())).unwrap();
        assert_eq!(rest.checkpoint.params, full.checkpoint.params);
        assert_eq!(rest.checkpoint.losses, full.checkpoint.losses);
        assert_eq!(store.codebooks, books_before);
    }
}
