//! Command-line entry point. Every subcommand reads files written by an
//! earlier stage, writes its outputs plus a resolved-config snapshot into
//! one output directory, and never touches its inputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asd::{evaluate_asd, train_detectors, AsdReport, DetectorConfig};
use crate::captions::{caption_from_metadata, encode_caption, parse_caption, Caption};
use crate::codec::{self, LatentTensor};
use crate::diffusion;
use crate::dsp;
use crate::metrics::{embeddings_csv, evaluate_generation, BuiltinBackend, MetricReport};
use crate::par::ExecPolicy;
use crate::signalgen::{
    build_dataset, read_manifest, resolve_path, write_manifest, write_wav, AudioClip, DatasetSpec, ManifestEntry, Split,
};
use crate::trainer::{crop_latent, describe, loss_csv, Checkpoint, LatentStore, PrepareConfig, TrainConfig, Trainer};
use crate::{Error, Result, SCHEMA_VERSION};

pub const RUN_ROOT_ENV: &str = "MACHSOUND_RUN_ROOT";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const LOSS_FILE: &str = "losses.csv";
pub const GENERATED_MANIFEST: &str = "generated.jsonl";
pub const METRICS_FILE: &str = "metrics.json";
pub const ASD_FILE: &str = "asd.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub seed: u64,
    /// Sampling steps; 0 runs the full training schedule.
    pub steps: usize,
    /// Seconds per clip; 0 uses the training clip duration.
    pub duration: f64,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig { seed: 0, steps: 0, duration: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub dataset: DatasetSpec,
    pub prepare: PrepareConfig,
    pub train: TrainConfig,
    pub generate: GenerateConfig,
    pub detector: DetectorConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            format_version: SCHEMA_VERSION,
            dataset: DatasetSpec::default(),
            prepare: PrepareConfig::default(),
            train: TrainConfig::default(),
            generate: GenerateConfig::default(),
            detector: DetectorConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg: RunConfig = toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), one_line(&e.to_string()))))?;
        if cfg.format_version != SCHEMA_VERSION {
            return Err(Error::VersionMismatch { found: cfg.format_version, supported: SCHEMA_VERSION });
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[derive(Serialize)]
struct Snapshot<'a> {
    run: RunInfo,
    config: &'a RunConfig,
}

#[derive(Serialize)]
struct RunInfo {
    subcommand: String,
    format_version: u32,
    inputs: BTreeMap<String, String>,
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Parser, Debug)]
#[command(name = "machsound", version, about = "Synthetic machine-sound generation and anomaly-detection evaluation")]
struct Cli {
    /// Run on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration; absent sections keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved configuration and exit.
    #[arg(long)]
    print_config: bool,
    /// Output directory (default: $MACHSOUND_RUN_ROOT/<subcommand>).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize clips and write train / eval manifests.
    Dataset {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Add a caption to every manifest entry.
    Caption {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "print_config")]
        manifest: Option<PathBuf>,
    },
    /// Encode, quantize and normalize training clips into a latent store.
    Prepare {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "print_config")]
        manifest: Option<PathBuf>,
    },
    /// Train the denoiser on a latent store.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "print_config")]
        store: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Sample clips from a checkpoint.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "print_config")]
        checkpoint: Option<PathBuf>,
        /// Manifest whose entries without audio are generation requests.
        #[arg(long, conflicts_with = "caption")]
        manifest: Option<PathBuf>,
        #[arg(long)]
        caption: Option<String>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        duration: Option<f64>,
    },
    /// FAD, KL, IS and caption alignment of generated clips.
    EvalGen {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "print_config")]
        real: Option<PathBuf>,
        #[arg(long, required_unless_present = "print_config")]
        generated: Option<PathBuf>,
        /// Also write per-clip embeddings as CSV.
        #[arg(long)]
        embeddings_csv: bool,
    },
    /// Detector AUCs with real versus generated anomalies.
    EvalAsd {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "print_config")]
        train: Option<PathBuf>,
        #[arg(long, required_unless_present = "print_config")]
        real: Option<PathBuf>,
        #[arg(long, required_unless_present = "print_config")]
        generated: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Render the metric and AUC tables of a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Dataset { .. } => "dataset",
            Command::Caption { .. } => "caption",
            Command::Prepare { .. } => "prepare",
            Command::Train { .. } => "train",
            Command::Generate { .. } => "generate",
            Command::EvalGen { .. } => "eval-gen",
            Command::EvalAsd { .. } => "eval-asd",
            Command::Report { .. } => "report",
        }
    }
}

/// Runs one command line (program name first) and returns the exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let rendered = e.render().to_string();
            let mut lines = rendered.lines();
            let first = lines.next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: usage: {first}");
            for l in lines {
                eprintln!("{l}");
            }
            return 2;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}: {}", e.kind(), one_line(&e.to_string()));
            1
        }
    }
}

fn run_root() -> PathBuf {
    std::env::var_os(RUN_ROOT_ENV).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"))
}

fn output_dir(common: &Common, sub: &str) -> Result<PathBuf> {
    let out = common.out.clone().unwrap_or_else(|| run_root().join(sub));
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    Ok(out)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    write_text(path, &s)
}

// Input paths are stored relative to `out` so the snapshot does not depend
// on where the run tree lives.
fn write_snapshot(out: &Path, sub: &str, config: &RunConfig, inputs: &[(&str, &Path)]) -> Result<()> {
    let snap = Snapshot {
        run: RunInfo {
            subcommand: sub.to_string(),
            format_version: SCHEMA_VERSION,
            inputs: inputs.iter().map(|(k, p)| Ok((k.to_string(), relative_to(p, out)?))).collect::<Result<_>>()?,
        },
        config,
    };
    let text = toml::to_string(&snap).map_err(|e| Error::Config(e.to_string()))?;
    write_text(&out.join(format!("{sub}.config.toml")), &text)
}

fn absolute(p: &Path) -> Result<PathBuf> {
    std::path::absolute(p).map_err(|e| Error::io(p, e))
}

/// `target` relative to directory `base`, with forward slashes.
fn relative_to(target: &Path, base: &Path) -> Result<String> {
    let (t, b) = (absolute(target)?, absolute(base)?);
    let rel = pathdiff::diff_paths(&t, &b).unwrap_or(t);
    Ok(rel.to_string_lossy().replace('\\', "/"))
}

/// Re-points an entry read from `from` so it resolves from directory `to_dir`.
fn rebase(entry: &mut ManifestEntry, from: &Path, to_dir: &Path) -> Result<()> {
    if let Some(p) = resolve_path(from, entry) {
        entry.path = Some(relative_to(&p, to_dir)?);
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let policy = if cli.sequential { ExecPolicy::Sequential } else { ExecPolicy::Parallel };
    let sub = cli.command.name();
    if let Command::Report { run } = &cli.command {
        print!("{}", report(run)?);
        return Ok(());
    }
    let common = match &cli.command {
        Command::Dataset { common, .. }
        | Command::Caption { common, .. }
        | Command::Prepare { common, .. }
        | Command::Train { common, .. }
        | Command::Generate { common, .. }
        | Command::EvalGen { common, .. }
        | Command::EvalAsd { common, .. } => common,
        Command::Report { .. } => unreachable!(),
    };
    let mut config = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    // flag overrides land in the config so the snapshot records them
    match &cli.command {
        Command::Dataset { seed: Some(s), .. } => config.dataset.root_seed = *s,
        Command::Train { steps, seed, .. } => {
            if let Some(s) = steps {
                config.train.steps = *s;
            }
            if let Some(s) = seed {
                config.train.seed = *s;
            }
        }
        Command::Generate { seed, steps, duration, .. } => {
            if let Some(s) = seed {
                config.generate.seed = *s;
            }
            if let Some(s) = steps {
                config.generate.steps = *s;
            }
            if let Some(d) = duration {
                config.generate.duration = *d;
            }
        }
        Command::EvalAsd { seed: Some(s), .. } => config.detector.seed = *s,
        _ => {}
    }
    if common.print_config {
        print!("{}", config.to_toml()?);
        return Ok(());
    }
    let out = output_dir(common, sub)?;
    let req = |p: &Option<PathBuf>| p.clone().expect("clap enforces required paths");

    match cli.command {
        Command::Dataset { .. } => {
            write_snapshot(&out, sub, &config, &[])?;
            let m = build_dataset(&config.dataset, &out, policy)?;
            log::info!("wrote {} train, {} eval clips to {}", m.train.len(), m.eval_real.len(), out.display());
        }
        Command::Caption { manifest, .. } => {
            let manifest = req(&manifest);
            let target = out.join(manifest.file_name().unwrap_or("captions.jsonl".as_ref()));
            if absolute(&target)? == absolute(&manifest)? {
                return Err(Error::InvalidArgument("caption output would overwrite its input manifest".into()));
            }
            write_snapshot(&out, sub, &config, &[("manifest", &manifest)])?;
            let mut entries = read_manifest(&manifest)?;
            for e in &mut entries {
                e.metadata().validate()?;
                e.caption = Some(caption_from_metadata(&e.metadata()).text);
                rebase(e, &manifest, &out)?;
            }
            write_manifest(&target, &entries)?;
        }
        Command::Prepare { manifest, .. } => {
            let manifest = req(&manifest);
            write_snapshot(&out, sub, &config, &[("manifest", &manifest)])?;
            let store = crate::trainer::prepare_latents(&manifest, &config.prepare, policy)?;
            store.save(&out)?;
            log::info!("prepared {} latents of {} frames ({} skipped)", store.latents.len(), store.frames, store.skipped.len());
        }
        Command::Train { store, resume, steps, .. } => {
            let store_dir = req(&store);
            let mut inputs = vec![("store", store_dir.as_path())];
            if let Some(r) = &resume {
                inputs.push(("resume", r.as_path()));
            }
            write_snapshot(&out, sub, &config, &inputs)?;
            let store = LatentStore::load(&store_dir)?;
            let mut trainer = match &resume {
                Some(r) => {
                    let ck = Checkpoint::load(r)?;
                    let target = steps.unwrap_or(ck.config.steps);
                    Trainer::resume(&store, ck, target, policy)?
                }
                None => Trainer::new(&store, config.train.clone(), policy)?,
            };
            trainer.checkpoint.store = Some(relative_to(&store_dir, &out)?);
            let ck_path = out.join(CHECKPOINT_FILE);
            let ck = trainer.run(|ck| {
                log::info!("step {} loss {:.5}", ck.step, ck.losses.last().copied().unwrap_or(f64::NAN));
                ck.save(&ck_path)
            })?;
            write_text(&out.join(LOSS_FILE), &loss_csv(&ck.losses))?;
            let mut summary = describe(ck);
            summary["schema_version"] = SCHEMA_VERSION.into();
            write_json(&out.join("train.json"), &summary)?;
        }
        Command::Generate { checkpoint, manifest, caption, count, .. } => {
            let ck_path = req(&checkpoint);
            let mut inputs = vec![("checkpoint", ck_path.as_path())];
            if let Some(m) = &manifest {
                inputs.push(("manifest", m.as_path()));
            }
            write_snapshot(&out, sub, &config, &inputs)?;
            let ck = Checkpoint::load(&ck_path)?;
            let requests = match (&manifest, &caption) {
                (Some(m), _) => GenerationRequests::Manifest(m.clone()),
                (None, Some(c)) => GenerationRequests::Caption { text: c.clone(), count },
                (None, None) => return Err(Error::InvalidArgument("generate needs --manifest or --caption".into())),
            };
            generate_clips(&ck, &requests, &config.generate, &out, policy)?;
        }
        Command::EvalGen { real, generated, embeddings_csv: csv, .. } => {
            let (real, generated) = (req(&real), req(&generated));
            write_snapshot(&out, sub, &config, &[("real", &real), ("generated", &generated)])?;
            let backend = BuiltinBackend::new()?;
            let report = evaluate_generation(&real, &generated, &backend, policy)?;
            write_json(&out.join(METRICS_FILE), &report)?;
            if csv {
                write_text(&out.join("embeddings_real.csv"), &embeddings_csv(&real, &backend, policy)?)?;
                write_text(&out.join("embeddings_generated.csv"), &embeddings_csv(&generated, &backend, policy)?)?;
            }
        }
        Command::EvalAsd { train, real, generated, .. } => {
            let (train, real, generated) = (req(&train), req(&real), req(&generated));
            write_snapshot(&out, sub, &config, &[("train", &train), ("real", &real), ("generated", &generated)])?;
            let detectors = train_detectors(&train, &config.detector, policy)?;
            let (report, _) = evaluate_asd(&detectors, &real, &generated, policy)?;
            write_json(&out.join(ASD_FILE), &report)?;
        }
        Command::Report { .. } => unreachable!(),
    }
    Ok(())
}

pub enum GenerationRequests {
    /// Entries without audio are sampled; the others are carried over.
    Manifest(PathBuf),
    Caption { text: String, count: usize },
}

/// Sampling seed of the `index`-th clip of a generation run.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(b"generate");
    h.update(seed.to_le_bytes());
    h.update((index as u64).to_le_bytes());
    u64::from_le_bytes(h.finalize()[..8].try_into().unwrap())
}

/// Samples one clip: caption embedding, ancestral sampling, de-normalization,
/// flat reshape, codec decode and resampling to 16 kHz.
pub fn generate_clip(ck: &Checkpoint, caption: &str, seed: u64, steps: usize, duration: f64) -> Result<AudioClip> {
    if caption.trim().is_empty() {
        return Err(Error::InvalidArgument("empty caption".into()));
    }
    if ck.codebooks.dim != codec::LATENT_DIM || ck.stats.mean.len() != codec::CHANNELS {
        return Err(Error::Checkpoint("codec dimensions do not match the latent layout".into()));
    }
    let schedule = if steps == 0 || steps == ck.schedule.len() { ck.schedule.clone() } else { ck.schedule.respaced(steps)? };
    let duration = if duration > 0.0 { duration } else { ck.duration };
    let samples = (duration * 16000.0).round() as usize;
    let frames = codec::frames_for_samples(samples * 3 / 2).max(1);
    let m = ck.params.config.frame_multiple();
    let padded = frames.div_ceil(m) * m;
    let emb = encode_caption(&Caption { text: caption.to_string(), source: None });
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z = diffusion::sample(&emb, &ck.params, &schedule, padded, &mut rng)?;
    let z = crop_latent(&z, 0, frames)?;
    let flat: LatentTensor = z.reshape_to_flat(&ck.stats)?;
    let wave = codec::decode(&flat)?.to_f64();
    let mut wave = wave;
    wave.resize(wave.len().div_ceil(3) * 3, 0.0);
    let mut y = dsp::resample(&wave, codec::CODEC_RATE, 16000)?;
    y.resize(samples, 0.0);
    Ok(AudioClip::new(y.into_iter().map(|v| v as f32).collect(), 16000))
}

/// Writes `wav/` and a generation manifest into `out`; returns its entries.
pub fn generate_clips(
    ck: &Checkpoint,
    requests: &GenerationRequests,
    config: &GenerateConfig,
    out: &Path,
    policy: ExecPolicy,
) -> Result<Vec<ManifestEntry>> {
    let mut entries: Vec<ManifestEntry> = Vec::new();
    let mut todo: Vec<usize> = Vec::new();
    match requests {
        GenerationRequests::Manifest(path) => {
            for (i, mut e) in read_manifest(path)?.into_iter().enumerate() {
                if e.path.is_none() {
                    e.caption = Some(e.caption.clone().unwrap_or_else(|| caption_from_metadata(&e.metadata()).text));
                    e.path = Some(format!("wav/{}_{}_{i:05}.wav", e.machine, e.condition.name()));
                    e.split = Split::Generated;
                    todo.push(entries.len());
                } else {
                    rebase(&mut e, path, out)?;
                }
                entries.push(e);
            }
        }
        GenerationRequests::Caption { text, count } => {
            let (machine, condition) = parse_caption(text)
                .ok_or_else(|| Error::InvalidArgument(format!("caption names no known machine type: {text:?}")))?;
            for i in 0..*count {
                entries.push(ManifestEntry {
                    path: Some(format!("wav/{}_{}_{i:05}.wav", machine, condition.name())),
                    machine,
                    condition,
                    attributes: Vec::new(),
                    seed: 0,
                    split: Split::Generated,
                    caption: Some(text.clone()),
                    sample_seed: None,
                });
                todo.push(i);
            }
        }
    }
    for (k, &i) in todo.iter().enumerate() {
        entries[i].sample_seed = Some(sample_seed(config.seed, k));
    }
    let clips = crate::par::try_map(policy, &todo, |&i| {
        let e = &entries[i];
        let clip = generate_clip(ck, e.caption.as_deref().unwrap_or(""), e.sample_seed.unwrap(), config.steps, config.duration)?;
        write_wav(&clip, &out.join(e.path.as_deref().unwrap()))
    })?;
    log::info!("generated {} clips", clips.len());
    write_manifest(&out.join(GENERATED_MANIFEST), &entries)?;
    Ok(entries)
}

/// Text tables of a run directory holding `metrics.json` and `asd.json`.
pub fn report(run: &Path) -> Result<String> {
    let missing: Vec<String> =
        [METRICS_FILE, ASD_FILE].iter().filter(|f| !run.join(f).is_file()).map(|f| run.join(f).display().to_string()).collect();
    if !missing.is_empty() {
        return Err(Error::MissingInputs(format!("expected {}", missing.join(", "))));
    }
    let read = |f: &str| -> Result<String> { fs::read_to_string(run.join(f)).map_err(|e| Error::io(run.join(f), e)) };
    let m: MetricReport = serde_json::from_str(&read(METRICS_FILE)?)?;
    let a: AsdReport = serde_json::from_str(&read(ASD_FILE)?)?;

    let mut s = String::new();
    s.push_str(&format!("Generation quality ({} backend, {} real / {} generated clips)\n", m.backend, m.n_real, m.n_generated));
    s.push_str(&format!("{:>10} {:>10} {:>10} {:>12} {:>12}\n", "FAD", "KL", "IS", "CLAP(orig)", "CLAP(gen)"));
    s.push_str(&format!(
        "{:>10.4} {:>10.4} {:>10.4} {:>12.4} {:>12.4}\n\n",
        m.fad, m.kl, m.is_score, m.clap_original, m.clap_generated
    ));
    s.push_str("Anomaly detection AUC\n");
    s.push_str(&format!("{:<12} {:>10} {:>10} {:>10}\n", "machine", "real", "generated", "|diff|"));
    for (name, r) in &a.machines {
        s.push_str(&format!(
            "{:<12} {:>10.4} {:>10.4} {:>10.4}\n",
            name,
            r.auc_real,
            r.auc_generated,
            (r.auc_real - r.auc_generated).abs()
        ));
    }
    s.push_str(&format!(
        "\nmean |AUC gap|: {:.2} points, rank correlation: {:.3}\n",
        100.0 * a.summary.mean_abs_gap,
        a.summary.rank_correlation
    ));
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_round_trips_through_toml() {
        let c = RunConfig::default();
        let back: RunConfig = toml::from_str(&c.to_toml().unwrap()).unwrap();
        assert_eq!(back, c);
        let partial: RunConfig = toml::from_str("[train]\nsteps = 7\n[train.schedule]\nsteps = 100\n").unwrap();
        assert_eq!(partial.train.steps, 7);
        assert_eq!(partial.train.schedule.steps, 100);
        assert_eq!(partial.dataset, DatasetSpec::default());
        assert!(toml::from_str::<RunConfig>("[train]\nstepz = 7\n").is_err());
    }

    #[test]
    fn sample_seeds_are_distinct() {
        let s: std::collections::HashSet<u64> = (0..1000).map(|i| sample_seed(3, i)).collect();
        assert_eq!(s.len(), 1000);
        assert_ne!(sample_seed(3, 0), sample_seed(4, 0));
    }

    #[test]
    fn relative_paths() {
        assert_eq!(relative_to(Path::new("/a/b/c.wav"), Path::new("/a/d")).unwrap(), "../b/c.wav");
    }

    #[test]
    fn unknown_subcommand_and_flags_fail() {
        assert_eq!(dispatch(["machsound", "frobnicate"]), 2);
        assert_eq!(dispatch(["machsound", "dataset", "--bogus"]), 2);
        assert_eq!(dispatch(["machsound", "--help"]), 0);
        assert_eq!(dispatch(["machsound", "train", "--print-config"]), 0);
    }

    #[test]
    fn report_lists_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let err = report(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(METRICS_FILE) && msg.contains(ASD_FILE), "{msg}");
        assert_eq!(err.kind(), "missing-inputs");
    }
}
