//! Generation metrics: Fréchet distance between embedding Gaussians, KL
//! divergence and Inception Score over classifier outputs, and a CLAP-style
//! caption alignment. Embedding and classifier backends sit behind traits;
//! the built-in backend uses log-mel summary statistics.

use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::captions::{caption_from_metadata, encode_caption, Caption, COND_DIM};
use crate::diffusion::standard_normal;
use crate::dsp::{self, MelSpectrogram};
use crate::par::{self, ExecPolicy};
use crate::signalgen::{read_manifest, read_wav, resolve_path, synthesize, AudioClip, Condition, ManifestEntry, MachineType, MetadataRecord, Split};
use crate::{Error, Result, SCHEMA_VERSION};

pub const EMBED_RATE: u32 = 16000;
pub const MEL_BANDS: usize = 64;
pub const MEL_FFT: usize = 1024;
pub const MEL_HOP: usize = 512;
pub const MEL_FLOOR: f64 = 1e-10;
pub const EMBED_DIM: usize = 2 * MEL_BANDS;
pub const PROB_FLOOR: f64 = 1e-10;
const TEXT_PROJECTION_SEED: u64 = 0x636c_6170;
const CLASSIFIER_SHARPNESS: f64 = 10.0;

fn mel() -> MelSpectrogram {
    MelSpectrogram::new(EMBED_RATE, MEL_FFT, MEL_HOP, MEL_BANDS, MEL_FLOOR)
}

fn at_embed_rate(clip: &AudioClip) -> Result<Vec<f64>> {
    let x = clip.to_f64();
    if clip.sample_rate == EMBED_RATE {
        Ok(x)
    } else {
        dsp::resample(&x, clip.sample_rate, EMBED_RATE)
    }
}

/// Log-mel frames at 16 kHz.
fn log_mel(clip: &AudioClip) -> Result<Vec<Vec<f64>>> {
    mel().log_mel(&at_embed_rate(clip)?)
}

fn band_means(frames: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; MEL_BANDS];
    for f in frames {
        m.iter_mut().zip(f).for_each(|(a, b)| *a += b);
    }
    m.iter_mut().for_each(|v| *v /= frames.len() as f64);
    m
}

/// Per-band mean then per-band standard deviation of the log-mel frames.
pub fn builtin_embed(clip: &AudioClip) -> Result<Vec<f64>> {
    let frames = log_mel(clip)?;
    let mean = band_means(&frames);
    let mut var = vec![0.0; MEL_BANDS];
    for f in &frames {
        for b in 0..MEL_BANDS {
            var[b] += (f[b] - mean[b]).powi(2);
        }
    }
    let mut out = mean;
    out.extend(var.iter().map(|v| (v / frames.len() as f64).sqrt()));
    Ok(out)
}

pub trait EmbeddingBackend: Sync {
    fn id(&self) -> &str;
    fn embed(&self, clip: &AudioClip) -> Result<Vec<f64>>;
    fn classify(&self, clip: &AudioClip) -> Result<Vec<f64>>;
}

/// Log-mel statistics for embeddings; for class scores, a softmax over the
/// correlation of the clip's mean log-mel profile with one template per
/// machine type, each built from canonical synthesized normal clips.
pub struct BuiltinBackend {
    templates: Vec<Vec<f64>>,
}

impl BuiltinBackend {
    pub fn new() -> Result<Self> {
        let templates = MachineType::ALL
            .iter()
            .map(|&m| {
                let mut acc = vec![0.0; MEL_BANDS];
                for seed in 0..3u64 {
                    let r = MetadataRecord::new(m, Condition::Normal, &[], 0x7e3a_0000 + seed)?;
                    let prof = band_means(&log_mel(&synthesize(&r, 2.0, EMBED_RATE)?)?);
                    acc.iter_mut().zip(&prof).for_each(|(a, b)| *a += b / 3.0);
                }
                Ok(acc)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(BuiltinBackend { templates })
    }
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        0.0
    } else {
        sab / (saa * sbb).sqrt()
    }
}

pub fn softmax(x: &[f64]) -> Vec<f64> {
    let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter().map(|v| v / z).collect()
}

impl EmbeddingBackend for BuiltinBackend {
    fn id(&self) -> &str {
        "builtin-logmel-v1"
    }

    fn embed(&self, clip: &AudioClip) -> Result<Vec<f64>> {
        builtin_embed(clip)
    }

    fn classify(&self, clip: &AudioClip) -> Result<Vec<f64>> {
        let prof = band_means(&log_mel(clip)?);
        let scores: Vec<f64> = self.templates.iter().map(|t| CLASSIFIER_SHARPNESS * pearson(&prof, t)).collect();
        Ok(softmax(&scores))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingStats {
    pub mean: Vec<f64>,
    /// Row-major `d × d`.
    pub cov: Vec<f64>,
    pub n: usize,
}

impl EmbeddingStats {
    /// Sample mean and unbiased covariance.
    pub fn from_embeddings(x: &[Vec<f64>]) -> Result<Self> {
        if x.len() < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 embeddings, got {}", x.len())));
        }
        let d = x[0].len();
        if x.iter().any(|v| v.len() != d) {
            return Err(Error::Shape("embeddings differ in dimension".into()));
        }
        let n = x.len();
        let mut mean = vec![0.0; d];
        for v in x {
            mean.iter_mut().zip(v).for_each(|(m, a)| *m += a / n as f64);
        }
        let mut cov = vec![0.0; d * d];
        for v in x {
            let c: Vec<f64> = v.iter().zip(&mean).map(|(a, m)| a - m).collect();
            for i in 0..d {
                for j in i..d {
                    cov[i * d + j] += c[i] * c[j];
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let v = cov[i * d + j] / (n - 1) as f64;
                cov[i * d + j] = v;
                cov[j * d + i] = v;
            }
        }
        Ok(EmbeddingStats { mean, cov, n })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    fn check(&self) -> Result<()> {
        let d = self.dim();
        if self.cov.len() != d * d {
            return Err(Error::Shape(format!("covariance of {} values for dimension {d}", self.cov.len())));
        }
        if self.mean.iter().chain(&self.cov).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("embedding statistics are not finite".into()));
        }
        Ok(())
    }
}

/// Symmetric PSD square root, clamping negative eigenvalues to 0.
fn sqrt_psd(m: DMatrix<f64>) -> DMatrix<f64> {
    let sym = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

/// ‖μr−μg‖² + Tr(Σr + Σg − 2(Σr Σg)^½), with the trace of the product root
/// taken from the symmetric form √Σr·Σg·√Σr.
pub fn fad(real: &EmbeddingStats, gen: &EmbeddingStats) -> Result<f64> {
    real.check()?;
    gen.check()?;
    let d = real.dim();
    if gen.dim() != d {
        return Err(Error::Shape(format!("embedding dimensions {d} and {} differ", gen.dim())));
    }
    let mu: f64 = real.mean.iter().zip(&gen.mean).map(|(a, b)| (a - b) * (a - b)).sum();
    let sr = DMatrix::from_row_slice(d, d, &real.cov);
    let sg = DMatrix::from_row_slice(d, d, &gen.cov);
    let root = sqrt_psd(sr.clone());
    let inner = &root * &sg * &root;
    let sym = (&inner + inner.transpose()) * 0.5;
    let tr_root: f64 = SymmetricEigen::new(sym).eigenvalues.iter().map(|v| v.max(0.0).sqrt()).sum();
    Ok((mu + sr.trace() + sg.trace() - 2.0 * tr_root).max(0.0))
}

/// Per-clip probability vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassDistribution(pub Vec<Vec<f64>>);

impl ClassDistribution {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let c = rows.first().map_or(0, |r| r.len());
        for (i, r) in rows.iter().enumerate() {
            if r.len() != c || r.iter().any(|&p| !(p >= 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!("row {i} is not a probability vector over {c} classes")));
            }
        }
        Ok(ClassDistribution(rows))
    }

    pub fn classes(&self) -> usize {
        self.0.first().map_or(0, |r| r.len())
    }
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let a = a.max(PROB_FLOOR);
            a * (a / b.max(PROB_FLOOR)).ln()
        })
        .sum()
}

/// Mean over pairs of KL(p_ref ‖ p_gen).
pub fn kl_divergence(gen: &ClassDistribution, reference: &ClassDistribution) -> Result<f64> {
    if gen.0.len() != reference.0.len() || gen.0.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "KL needs paired clips, got {} generated and {} reference",
            gen.0.len(),
            reference.0.len()
        )));
    }
    if gen.classes() != reference.classes() {
        return Err(Error::Shape("class counts differ".into()));
    }
    Ok(gen.0.iter().zip(&reference.0).map(|(g, r)| kl(r, g)).sum::<f64>() / gen.0.len() as f64)
}

/// exp(mean_i KL(p(y|x_i) ‖ p̄)), single split.
pub fn inception_score(gen: &ClassDistribution) -> Result<f64> {
    if gen.0.is_empty() {
        return Err(Error::InvalidArgument("inception score of an empty set".into()));
    }
    let n = gen.0.len() as f64;
    let mut marginal = vec![0.0; gen.classes()];
    for r in &gen.0 {
        marginal.iter_mut().zip(r).for_each(|(m, p)| *m += p / n);
    }
    // 0·ln 0 = 0, and the marginal is positive wherever a row is, so no floor
    let kl_exact = |r: &[f64]| -> f64 { r.iter().zip(&marginal).filter(|(p, _)| **p > 0.0).map(|(p, m)| p * (p / m).ln()).sum() };
    Ok((gen.0.iter().map(|r| kl_exact(r)).sum::<f64>() / n).exp())
}

pub fn cosine(a: &[f64], b: &[f64]) -> Result<f64> {
    let na = a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::InvalidArgument("cosine of a zero vector".into()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb))
}

/// Fixed seeded Gaussian projection from pooled caption space to the audio
/// embedding dimension.
pub fn project_text(pooled: &[f64]) -> Result<Vec<f64>> {
    if pooled.len() != COND_DIM {
        return Err(Error::Shape(format!("text vector of dimension {} (expected {COND_DIM})", pooled.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(TEXT_PROJECTION_SEED);
    let w = standard_normal(EMBED_DIM * COND_DIM, &mut rng);
    let mut out = vec![0.0; EMBED_DIM];
    crate::linalg::gemm_acc(&w, pooled, &mut out, EMBED_DIM, COND_DIM, 1);
    Ok(out)
}

/// Mean cosine similarity between audio embeddings and projected text.
pub fn clap_style_score(audio: &[Vec<f64>], text: &[Vec<f64>]) -> Result<f64> {
    if audio.len() != text.len() || audio.is_empty() {
        return Err(Error::InvalidArgument(format!("{} audio and {} text embeddings", audio.len(), text.len())));
    }
    let mut s = 0.0;
    for (a, t) in audio.iter().zip(text) {
        s += cosine(a, t)?;
    }
    Ok(s / audio.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema_version: u32,
    pub backend: String,
    pub fad: f64,
    pub kl: f64,
    pub is_score: f64,
    pub clap_original: f64,
    pub clap_generated: f64,
    pub n_real: usize,
    pub n_generated: usize,
}

struct Scored {
    embedding: Vec<f64>,
    probs: Vec<f64>,
    text: Vec<f64>,
}

fn pair_key(e: &ManifestEntry) -> (MachineType, Condition, Vec<(String, String)>, u64) {
    (e.machine, e.condition, e.attributes.clone(), e.seed)
}

fn caption_of(e: &ManifestEntry) -> String {
    e.caption.clone().unwrap_or_else(|| caption_from_metadata(&e.metadata()).text)
}

fn score_entries(manifest: &Path, entries: &[ManifestEntry], backend: &dyn EmbeddingBackend, policy: ExecPolicy) -> Result<Vec<Scored>> {
    par::try_map(policy, entries, |e| {
        let path = resolve_path(manifest, e)
            .ok_or_else(|| Error::MissingInputs(format!("{}: entry without audio", manifest.display())))?;
        let with_path = |err: Error| Error::InvalidArgument(format!("{}: {err}", path.display()));
        let clip = read_wav(&path)?;
        let pooled = encode_caption(&Caption { text: caption_of(e), source: None }).mean_pool();
        Ok(Scored {
            embedding: backend.embed(&clip).map_err(with_path)?,
            probs: backend.classify(&clip).map_err(with_path)?,
            text: project_text(&pooled)?,
        })
    })
}

/// Scores a generated manifest against a real one. Generated clips are
/// paired with the real clip carrying the same metadata; when the generated
/// manifest marks some entries as generated, only those are scored.
pub fn evaluate_generation(
    real_manifest: &Path,
    gen_manifest: &Path,
    backend: &dyn EmbeddingBackend,
    policy: ExecPolicy,
) -> Result<MetricReport> {
    let real_all: Vec<ManifestEntry> = read_manifest(real_manifest)?.into_iter().filter(|e| e.path.is_some()).collect();
    let gen_all: Vec<ManifestEntry> = read_manifest(gen_manifest)?.into_iter().filter(|e| e.path.is_some()).collect();
    if real_all.is_empty() || gen_all.is_empty() {
        return Err(Error::MissingInputs("both manifests need at least one clip with audio".into()));
    }
    let gen: Vec<ManifestEntry> = if gen_all.iter().any(|e| e.split == Split::Generated) {
        gen_all.into_iter().filter(|e| e.split == Split::Generated).collect()
    } else {
        gen_all
    };
    let real = gen
        .iter()
        .map(|g| {
            real_all.iter().find(|r| pair_key(r) == pair_key(g)).cloned().ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "generated clip {} has no real counterpart in {}",
                    g.path.as_deref().unwrap_or(""),
                    real_manifest.display()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let rs = score_entries(real_manifest, &real, backend, policy)?;
    let gs = score_entries(gen_manifest, &gen, backend, policy)?;
    let emb = |s: &[Scored]| s.iter().map(|x| x.embedding.clone()).collect::<Vec<_>>();
    let probs = |s: &[Scored]| ClassDistribution::new(s.iter().map(|x| x.probs.clone()).collect());
    let texts: Vec<Vec<f64>> = rs.iter().map(|x| x.text.clone()).collect();
    let (re, ge) = (emb(&rs), emb(&gs));
    let (rp, gp) = (probs(&rs)?, probs(&gs)?);
    Ok(MetricReport {
        schema_version: SCHEMA_VERSION,
        backend: backend.id().to_string(),
        fad: fad(&EmbeddingStats::from_embeddings(&re)?, &EmbeddingStats::from_embeddings(&ge)?)?,
        kl: kl_divergence(&gp, &rp)?,
        is_score: inception_score(&gp)?,
        clap_original: clap_style_score(&re, &texts)?,
        clap_generated: clap_style_score(&ge, &texts)?,
        n_real: real.len(),
        n_generated: gen.len(),
    })
}

/// `path,e0,...,e127` for every clip of a manifest.
pub fn embeddings_csv(manifest: &Path, backend: &dyn EmbeddingBackend, policy: ExecPolicy) -> Result<String> {
    let entries: Vec<ManifestEntry> = read_manifest(manifest)?.into_iter().filter(|e| e.path.is_some()).collect();
    let scored = score_entries(manifest, &entries, backend, policy)?;
    let mut s = String::from("path");
    for i in 0..scored.first().map_or(0, |x| x.embedding.len()) {
        s.push_str(&format!(",e{i}"));
    }
    s.push('\n');
    for (e, x) in entries.iter().zip(&scored) {
        s.push_str(e.path.as_deref().unwrap_or(""));
        for v in &x.embedding {
            s.push_str(&format!(",{v:?}"));
        }
        s.push('\n');
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: Vec<f64>, cov: Vec<f64>) -> EmbeddingStats {
        EmbeddingStats { n: 10, mean, cov }
    }

    fn eye(d: usize) -> Vec<f64> {
        (0..d * d).map(|i| if i % (d + 1) == 0 { 1.0 } else { 0.0 }).collect()
    }

    #[test]
    fn fad_oracles() {
        let a = stats(vec![0.3, -1.0], vec![2.0, 0.5, 0.5, 1.0]);
        assert!(fad(&a, &a).unwrap().abs() < 1e-9);
        let d = 16;
        let f = fad(&stats(vec![0.0; d], eye(d)), &stats(vec![1.0; d], eye(d))).unwrap();
        assert!((f - d as f64).abs() < 1e-9);
        let f = fad(&stats(vec![0.0; 2], vec![1.0, 0.0, 0.0, 4.0]), &stats(vec![0.0; 2], vec![4.0, 0.0, 0.0, 1.0])).unwrap();
        assert!((f - 2.0).abs() < 1e-6);
        assert!(fad(&stats(vec![0.0; 2], eye(2)), &stats(vec![0.0; 3], eye(3))).is_err());
        assert!(fad(&stats(vec![f64::NAN, 0.0], eye(2)), &stats(vec![0.0; 2], eye(2))).is_err());
    }

    #[test]
    fn fad_is_symmetric_and_quadratic_in_shift() {
        let cov_a = vec![2.0, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 0.5];
        let cov_b = vec![1.0, -0.1, 0.1, -0.1, 3.0, 0.0, 0.1, 0.0, 0.7];
        let a = stats(vec![0.0; 3], cov_a.clone());
        let b = stats(vec![1.0, 2.0, -1.0], cov_b);
        assert!((fad(&a, &b).unwrap() - fad(&b, &a).unwrap()).abs() < 1e-9);
        // fixed covariance: fad(shift s) = s²‖u‖²
        let base = fad(&a, &stats(vec![0.0; 3], cov_a.clone())).unwrap();
        assert!(base.abs() < 1e-9);
        for s in 1..=5 {
            let s = s as f64;
            let f = fad(&a, &stats(vec![s, 0.0, s], cov_a.clone())).unwrap();
            assert!((f - 2.0 * s * s).abs() < 1e-8);
        }
    }

    #[test]
    fn covariance_is_unbiased() {
        let s = EmbeddingStats::from_embeddings(&[vec![1.0, 0.0], vec![3.0, 2.0]]).unwrap();
        assert_eq!(s.mean, vec![2.0, 1.0]);
        assert_eq!(s.cov, vec![2.0, 2.0, 2.0, 2.0]);
        assert!(EmbeddingStats::from_embeddings(&[vec![1.0]]).is_err());
    }

    #[test]
    fn kl_and_is_oracles() {
        let p_ref = ClassDistribution::new(vec![vec![1.0, 0.0]]).unwrap();
        let p_gen = ClassDistribution::new(vec![vec![0.5, 0.5]]).unwrap();
        assert!((kl_divergence(&p_gen, &p_ref).unwrap() - 2f64.ln()).abs() < 1e-4);
        assert_eq!(kl_divergence(&p_ref, &p_ref).unwrap(), 0.0);
        let two = ClassDistribution::new(vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        assert!((inception_score(&two).unwrap() - 2.0).abs() < 1e-9);
        let same = ClassDistribution::new(vec![vec![0.2, 0.8]; 4]).unwrap();
        assert!((inception_score(&same).unwrap() - 1.0).abs() < 1e-9);
        assert!(kl_divergence(&two, &p_ref).is_err());
        assert!(inception_score(&ClassDistribution(vec![])).is_err());
        assert!(ClassDistribution::new(vec![vec![0.5, 0.6]]).is_err());
    }

    #[test]
    fn kl_and_is_properties() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let rand_dist = |rng: &mut ChaCha8Rng| softmax(&standard_normal(5, rng));
        let mut rows = Vec::new();
        for _ in 0..100 {
            let g = ClassDistribution::new(vec![rand_dist(&mut rng)]).unwrap();
            let r = ClassDistribution::new(vec![rand_dist(&mut rng)]).unwrap();
            assert!(kl_divergence(&g, &r).unwrap() >= 0.0);
            // no entry is near the floor, so flooring is inert
            let raw: f64 = r.0[0].iter().zip(&g.0[0]).map(|(p, q)| p * (p / q).ln()).sum();
            assert!((kl_divergence(&g, &r).unwrap() - raw).abs() < 1e-6);
            rows.push(g.0[0].clone());
        }
        let d = ClassDistribution::new(rows.clone()).unwrap();
        let is = inception_score(&d).unwrap();
        assert!((1.0 - 1e-9..=5.0).contains(&is));
        rows.reverse();
        assert!((inception_score(&ClassDistribution::new(rows).unwrap()).unwrap() - is).abs() < 1e-12);
    }

    #[test]
    fn clap_score_cases() {
        let pooled: Vec<f64> = (0..COND_DIM).map(|i| (i as f64).sin()).collect();
        let t = project_text(&pooled).unwrap();
        assert!((clap_style_score(std::slice::from_ref(&t), std::slice::from_ref(&t)).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(clap_style_score(&[vec![1.0, 0.0]], &[vec![0.0, 2.0]]).unwrap(), 0.0);
        assert!(clap_style_score(&[vec![0.0, 0.0]], &[vec![1.0, 0.0]]).is_err());
        assert!(clap_style_score(&[], &[]).is_err());
    }

    #[test]
    fn silence_embeds_to_the_floor() {
        let e = builtin_embed(&AudioClip::new(vec![0.0; 16000], 16000)).unwrap();
        assert_eq!(e.len(), EMBED_DIM);
        // ln(1e-10), pinned
        let floor = -23.025850929940457;
        assert!(e[..64].iter().all(|&v| (v - floor).abs() < 1e-12));
        assert!(e[64..].iter().all(|&v| v.abs() < 1e-12));
        assert!(builtin_embed(&AudioClip::new(vec![0.0; 1000], 16000)).is_err());
    }

    #[test]
    fn classifier_recognises_machine_types() {
        let b = BuiltinBackend::new().unwrap();
        for (i, &m) in MachineType::ALL.iter().enumerate() {
            let r = MetadataRecord::new(m, Condition::Normal, &[], 99).unwrap();
            let p = b.classify(&synthesize(&r, 2.0, 16000).unwrap()).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let best = (0..5).max_by(|&x, &y| p[x].partial_cmp(&p[y]).unwrap()).unwrap();
            assert_eq!(best, i, "{m}: {p:?}");
        }
    }
}
