//! Latent store: the prepared training set. Each training clip is encoded,
//! passed through RVQ and de-quantization, then reshaped into the 16-channel
//! layout and normalized with statistics of the store itself.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::container::{read_container, write_container, Tensor};
use crate::captions::{caption_from_metadata, encode_caption, Caption, ConditionEmbedding};
use crate::codec::{
    self, rvq_dequantize, rvq_quantize, train_codebooks, CodebookSet, KMeansParams, LatentTensor, NormStats,
    LATENT_DIM,
};
use crate::par::{self, ExecPolicy};
use crate::signalgen::{read_manifest, read_wav, resolve_path, ManifestEntry};
use crate::{Error, Result, SCHEMA_VERSION};

pub const LATENTS_FILE: &str = "latents.f32";
pub const LATENTS_META: &str = "latents.json";
pub const STORE_FILE: &str = "store.json";
pub const CODEC_FILE: &str = "codec.bin";
pub const CODEC_MAGIC: &[u8; 8] = b"MSCODEC\0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareConfig {
    pub bandwidth_kbps: f64,
    pub codebook_size: usize,
    pub kmeans: KMeansParams,
}

impl Default for PrepareConfig {
    fn default() -> Self {
        PrepareConfig {
            bandwidth_kbps: codec::DEFAULT_BANDWIDTH_KBPS,
            codebook_size: codec::DEFAULT_CODEBOOK_SIZE,
            kmeans: KMeansParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoreRecord {
    pub entry: ManifestEntry,
    pub caption: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentStore {
    pub records: Vec<StoreRecord>,
    /// Normalized diffusion-layout latents, one per record.
    pub latents: Vec<LatentTensor>,
    pub stats: NormStats,
    pub codebooks: CodebookSet,
    pub frames: usize,
    pub sample_rate: u32,
    pub duration: f64,
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct StoreJson {
    schema_version: u32,
    frames: usize,
    sample_rate: u32,
    duration: f64,
    stats: NormStats,
    records: Vec<StoreRecord>,
    skipped: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LatentsJson {
    schema_version: u32,
    layout: String,
    dims: Vec<usize>,
    normalized: bool,
    dtype: String,
}

impl LatentStore {
    pub fn embedding(&self, i: usize) -> ConditionEmbedding {
        encode_caption(&Caption { text: self.records[i].caption.clone(), source: None })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut raw = Vec::with_capacity(self.latents.len() * LATENT_DIM * self.frames * 4);
        for l in &self.latents {
            for v in &l.values {
                raw.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        write_file(&dir.join(LATENTS_FILE), &raw)?;
        let meta = LatentsJson {
            schema_version: SCHEMA_VERSION,
            layout: "diffusion".into(),
            dims: vec![self.latents.len(), codec::CHANNELS, codec::CHANNEL_ROWS, self.frames],
            normalized: true,
            dtype: "f32".into(),
        };
        write_file(&dir.join(LATENTS_META), &serde_json::to_vec_pretty(&meta)?)?;
        let store = StoreJson {
            schema_version: SCHEMA_VERSION,
            frames: self.frames,
            sample_rate: self.sample_rate,
            duration: self.duration,
            stats: self.stats.clone(),
            records: self.records.clone(),
            skipped: self.skipped.clone(),
        };
        write_file(&dir.join(STORE_FILE), &serde_json::to_vec_pretty(&store)?)?;
        save_codebooks(&dir.join(CODEC_FILE), &self.codebooks)
    }

    pub fn load(dir: &Path) -> Result<LatentStore> {
        let read = |name: &str| -> Result<Vec<u8>> {
            let p = dir.join(name);
            fs::read(&p).map_err(|e| Error::io(p, e))
        };
        let store: StoreJson = serde_json::from_slice(&read(STORE_FILE)?)?;
        let meta: LatentsJson = serde_json::from_slice(&read(LATENTS_META)?)?;
        let n = store.records.len();
        let want = vec![n, codec::CHANNELS, codec::CHANNEL_ROWS, store.frames];
        if meta.dims != want || meta.layout != "diffusion" || meta.dtype != "f32" {
            return Err(Error::Shape(format!("latents.json describes {:?}, store expects {want:?}", meta.dims)));
        }
        let raw = read(LATENTS_FILE)?;
        let per = LATENT_DIM * store.frames;
        if raw.len() != n * per * 4 {
            return Err(Error::Shape(format!("{LATENTS_FILE} holds {} bytes, expected {}", raw.len(), n * per * 4)));
        }
        let values: Vec<f64> = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect();
        let latents = values
            .chunks(per.max(1))
            .take(n)
            .map(|c| LatentTensor::diffusion(store.frames, c.to_vec(), true))
            .collect::<Result<Vec<_>>>()?;
        Ok(LatentStore {
            records: store.records,
            latents,
            stats: store.stats,
            codebooks: load_codebooks(&dir.join(CODEC_FILE))?,
            frames: store.frames,
            sample_rate: store.sample_rate,
            duration: store.duration,
            skipped: store.skipped,
        })
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub fn codebook_tensors(books: &CodebookSet) -> Vec<Tensor> {
    books
        .stages
        .iter()
        .enumerate()
        .map(|(i, s)| Tensor::new(format!("codec.stage.{i}"), vec![books.size, books.dim], s.clone()))
        .collect()
}

pub fn codebooks_from_tensors(tensors: &[Tensor]) -> Result<CodebookSet> {
    let stages: Vec<&Tensor> = tensors.iter().filter(|t| t.name.starts_with("codec.stage.")).collect();
    let first = stages.first().ok_or_else(|| Error::Checkpoint("no codebook stages".into()))?;
    let (size, dim) = (first.shape[0], first.shape[1]);
    if stages.iter().any(|t| t.shape != first.shape) {
        return Err(Error::Checkpoint("codebook stages disagree in shape".into()));
    }
    Ok(CodebookSet { dim, size, stages: stages.iter().map(|t| t.data.clone()).collect() })
}

pub fn save_codebooks(path: &Path, books: &CodebookSet) -> Result<()> {
    let meta = serde_json::json!({ "schema_version": SCHEMA_VERSION, "n_q": books.n_q(), "size": books.size });
    write_container(path, CODEC_MAGIC, meta, &codebook_tensors(books))
}

pub fn load_codebooks(path: &Path) -> Result<CodebookSet> {
    let (_, tensors) = read_container(path, CODEC_MAGIC)?;
    codebooks_from_tensors(&tensors)
}

/// Builds the store for every readable clip of a training manifest.
pub fn prepare_latents(manifest: &Path, config: &PrepareConfig, policy: ExecPolicy) -> Result<LatentStore> {
    let entries: Vec<ManifestEntry> = read_manifest(manifest)?.into_iter().filter(|e| e.path.is_some()).collect();
    let loaded = par::map(policy, &entries, |e| -> std::result::Result<(LatentTensor, u32, f64), String> {
        let path: PathBuf = resolve_path(manifest, e).expect("filtered to entries with audio");
        let clip = read_wav(&path).map_err(|err| format!("{}: {err}", path.display()))?;
        let latent = codec::encode(&clip).map_err(|err| format!("{}: {err}", path.display()))?;
        Ok((latent, clip.sample_rate, clip.duration()))
    });
    let mut records = Vec::new();
    let mut flat = Vec::new();
    let mut skipped = Vec::new();
    let mut format: Option<(u32, f64, usize)> = None;
    for (e, r) in entries.iter().zip(loaded) {
        match r {
            Ok((latent, sr, dur)) => {
                let f = *format.get_or_insert((sr, dur, latent.frames));
                if f.2 != latent.frames {
                    skipped.push(format!("{}: {} frames, expected {}", e.path.as_deref().unwrap_or(""), latent.frames, f.2));
                    log::warn!("skipping {}", skipped.last().unwrap());
                    continue;
                }
                let caption = e.caption.clone().unwrap_or_else(|| caption_from_metadata(&e.metadata()).text);
                records.push(StoreRecord { entry: e.clone(), caption });
                flat.push(latent);
            }
            Err(msg) => {
                log::warn!("skipping unreadable clip {msg}");
                skipped.push(msg);
            }
        }
    }
    let (sample_rate, duration, frames) =
        format.ok_or_else(|| Error::MissingInputs(format!("no readable clips in {}", manifest.display())))?;

    let n_q = codec::codebooks_for_bandwidth(config.bandwidth_kbps)?;
    let codebooks = train_codebooks(&flat, n_q, config.codebook_size, &config.kmeans)?;
    let deq = par::try_map(policy, &flat, |l| rvq_dequantize(&rvq_quantize(l, &codebooks)?, &codebooks))?;
    let stats = NormStats::compute(&deq)?;
    let latents = deq.iter().map(|l| l.reshape_to_diffusion(&stats)).collect::<Result<Vec<_>>>()?;
    Ok(LatentStore { records, latents, stats, codebooks, frames, sample_rate, duration, skipped })
}
