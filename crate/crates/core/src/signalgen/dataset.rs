use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::metadata::{Condition, MachineType, MetadataRecord, ANOMALY_KEY};
use super::synth::{synthesize, vocabulary};
use super::wav::write_wav;
use crate::par::{self, ExecPolicy};
use crate::{Error, Result};

pub const MANIFEST_TRAIN: &str = "train.jsonl";
pub const MANIFEST_EVAL_REAL: &str = "eval_real.jsonl";
pub const MANIFEST_EVAL_GEN: &str = "eval_gen.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    EvalReal,
    EvalGen,
    Generated,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::EvalReal => "eval_real",
            Split::EvalGen => "eval_gen",
            Split::Generated => "generated",
        }
    }
}

/// One manifest line. `path` is relative to the manifest's directory and is
/// `None` for generation requests that have no audio yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: Option<String>,
    pub machine: MachineType,
    pub condition: Condition,
    pub attributes: Vec<(String, String)>,
    pub seed: u64,
    pub split: Split,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
    /// Sampling seed of a generated clip.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_seed: Option<u64>,
}

impl ManifestEntry {
    pub fn metadata(&self) -> MetadataRecord {
        MetadataRecord {
            machine: self.machine,
            condition: self.condition,
            attributes: self.attributes.clone(),
            seed: self.seed,
        }
    }

    pub fn from_metadata(record: &MetadataRecord, path: Option<String>, split: Split) -> Self {
        ManifestEntry {
            path,
            machine: record.machine,
            condition: record.condition,
            attributes: record.attributes.clone(),
            seed: record.seed,
            split,
            caption: None,
            sample_seed: None,
        }
    }
}

/// Per-machine clip counts. The default is the full-scale protocol:
/// 990 normal training clips per machine and evaluation sets of 50 + 50.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSpec {
    pub root_seed: u64,
    pub duration: f64,
    pub sample_rate: u32,
    pub machines: Vec<MachineType>,
    pub train_normal: usize,
    pub train_anomalous: usize,
    pub eval_normal: usize,
    pub eval_anomalous: usize,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            root_seed: 0,
            duration: 10.0,
            sample_rate: 16000,
            machines: MachineType::ALL.to_vec(),
            train_normal: 990,
            train_anomalous: 0,
            eval_normal: 50,
            eval_anomalous: 50,
        }
    }
}

impl DatasetSpec {
    /// Small configuration for quick local runs.
    pub fn desk() -> Self {
        DatasetSpec {
            duration: 3.0,
            train_normal: 20,
            train_anomalous: 0,
            eval_normal: 8,
            eval_anomalous: 8,
            ..DatasetSpec::default()
        }
    }
}

/// Stable per-clip seed derived from the dataset root seed.
pub fn clip_seed(root: u64, machine: MachineType, split: &str, index: usize) -> u64 {
    let mut h = Sha256::new();
    h.update(root.to_le_bytes());
    h.update(machine.name().as_bytes());
    h.update([0u8]);
    h.update(split.as_bytes());
    h.update([0u8]);
    h.update((index as u64).to_le_bytes());
    let digest = h.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

fn random_record(machine: MachineType, condition: Condition, seed: u64) -> MetadataRecord {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_a77e);
    let (attrs, anomalies) = vocabulary(machine);
    let mut attributes: Vec<(String, String)> = attrs
        .iter()
        .map(|(k, vals)| (k.to_string(), vals[rng.random_range(0..vals.len())].to_string()))
        .collect();
    if condition == Condition::Anomalous {
        let a = anomalies[rng.random_range(0..anomalies.len())];
        attributes.push((ANOMALY_KEY.to_string(), a.to_string()));
    }
    MetadataRecord { machine, condition, attributes, seed }
}

/// Records of one split in manifest order: machine-major, normals first.
fn plan(spec: &DatasetSpec, split: &str, normal: usize, anomalous: usize) -> Vec<MetadataRecord> {
    let mut out = Vec::new();
    for &m in &spec.machines {
        for i in 0..normal + anomalous {
            let cond = if i < normal { Condition::Normal } else { Condition::Anomalous };
            out.push(random_record(m, cond, clip_seed(spec.root_seed, m, split, i)));
        }
    }
    out
}

fn wav_name(split: Split, r: &MetadataRecord, index: usize) -> String {
    format!("wav/{}/{}_{}_{:05}.wav", split.name(), r.machine, r.condition.name(), index)
}

#[derive(Debug, Clone, Default)]
pub struct DatasetManifests {
    pub train: Vec<ManifestEntry>,
    pub eval_real: Vec<ManifestEntry>,
    pub eval_gen: Vec<ManifestEntry>,
}

/// Synthesizes every clip of `spec` under `out_dir` and writes the three
/// manifests. The generated-anomaly evaluation set reuses the real set's
/// normal clips and carries the real anomalies' metadata as requests with no
/// audio; `generate` fills them in.
pub fn build_dataset(spec: &DatasetSpec, out_dir: &Path, policy: ExecPolicy) -> Result<DatasetManifests> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut result = DatasetManifests::default();

    for (split, normal, anomalous) in [
        (Split::Train, spec.train_normal, spec.train_anomalous),
        (Split::EvalReal, spec.eval_normal, spec.eval_anomalous),
    ] {
        let records = plan(spec, split.name(), normal, anomalous);
        let indexed: Vec<(usize, &MetadataRecord)> = records.iter().enumerate().collect();
        let entries = par::try_map(policy, &indexed, |&(i, r)| -> Result<ManifestEntry> {
            let clip = synthesize(r, spec.duration, spec.sample_rate)?;
            let rel = wav_name(split, r, i);
            write_wav(&clip, &out_dir.join(&rel))?;
            Ok(ManifestEntry::from_metadata(r, Some(rel), split))
        })?;
        match split {
            Split::Train => result.train = entries,
            _ => result.eval_real = entries,
        }
    }

    result.eval_gen = result
        .eval_real
        .iter()
        .map(|e| {
            let mut g = e.clone();
            g.split = Split::EvalGen;
            if g.condition == Condition::Anomalous {
                g.path = None;
            }
            g
        })
        .collect();

    write_manifest(&out_dir.join(MANIFEST_TRAIN), &result.train)?;
    write_manifest(&out_dir.join(MANIFEST_EVAL_REAL), &result.eval_real)?;
    write_manifest(&out_dir.join(MANIFEST_EVAL_GEN), &result.eval_gen)?;
    Ok(result)
}

pub fn write_manifest(path: &Path, entries: &[ManifestEntry]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n").map_err(|err| Error::io(path, err))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestEntry>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: ManifestEntry = serde_json::from_str(&line).map_err(|e| {
            Error::InvalidArgument(format!("{}:{}: {e}", path.display(), n + 1))
        })?;
        out.push(entry);
    }
    Ok(out)
}

/// Absolute location of an entry's audio, given the manifest it came from.
pub fn resolve_path(manifest: &Path, entry: &ManifestEntry) -> Option<PathBuf> {
    let rel = entry.path.as_ref()?;
    let p = Path::new(rel);
    if p.is_absolute() {
        Some(p.to_path_buf())
    } else {
        Some(manifest.parent().unwrap_or(Path::new(".")).join(p))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn counts(spec: &DatasetSpec) -> (usize, usize) {
        let per = |n, a| spec.machines.len() * (n + a);
        (per(spec.train_normal, spec.train_anomalous), per(spec.eval_normal, spec.eval_anomalous))
    }

    #[test]
    fn full_scale_protocol_counts() {
        let spec = DatasetSpec::default();
        let train = plan(&spec, "train", spec.train_normal, spec.train_anomalous);
        let eval = plan(&spec, "eval_real", spec.eval_normal, spec.eval_anomalous);
        assert_eq!(train.len(), 5 * 990);
        assert_eq!(eval.len(), 5 * 100);
        assert_eq!(counts(&spec), (4950, 500));
    }

    #[test]
    fn zero_counts_write_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec { train_normal: 0, eval_normal: 0, eval_anomalous: 0, ..DatasetSpec::desk() };
        let m = build_dataset(&spec, dir.path(), ExecPolicy::Parallel).unwrap();
        assert!(m.train.is_empty() && m.eval_real.is_empty() && m.eval_gen.is_empty());
        assert!(!dir.path().join("wav").exists());
        assert_eq!(fs::read_to_string(dir.path().join(MANIFEST_TRAIN)).unwrap(), "");
    }

    #[test]
    fn desk_dataset_layout() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DatasetSpec { duration: 0.25, ..DatasetSpec::desk() };
        let m = build_dataset(&spec, dir.path(), ExecPolicy::Parallel).unwrap();
        assert_eq!(m.train.len(), 100);
        assert_eq!(m.eval_real.len(), 80);
        assert_eq!(m.eval_gen.len(), 80);
        let back = read_manifest(&dir.path().join(MANIFEST_EVAL_GEN)).unwrap();
        assert_eq!(back, m.eval_gen);
        for e in &m.train {
            assert!(resolve_path(&dir.path().join(MANIFEST_TRAIN), e).unwrap().exists());
            assert_eq!(e.condition, Condition::Normal);
        }
        let requests = m.eval_gen.iter().filter(|e| e.path.is_none()).count();
        assert_eq!(requests, 40);
        // generation requests carry the real anomalies' metadata
        for (g, r) in m.eval_gen.iter().zip(&m.eval_real) {
            assert_eq!(g.attributes, r.attributes);
            assert_eq!(g.seed, r.seed);
        }
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        let a = clip_seed(1, MachineType::Fan, "train", 0);
        assert_eq!(a, clip_seed(1, MachineType::Fan, "train", 0));
        assert_ne!(a, clip_seed(1, MachineType::Fan, "train", 1));
        assert_ne!(a, clip_seed(1, MachineType::Valve, "train", 0));
        assert_ne!(a, clip_seed(2, MachineType::Fan, "train", 0));
    }
}
