//! Residual vector quantization.
//!
//! Each stage owns `K` trained codewords plus a null codeword (the zero
//! vector) at index `K`. A stage therefore never increases the residual
//! energy: when no trained codeword is closer than the origin, the null entry
//! is selected.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::latent::LatentTensor;
use super::mdct::LATENT_DIM;
use crate::par::{self, ExecPolicy};
use crate::{Error, Result};

/// Supported bandwidths, in kbps.
pub const BANDWIDTHS_KBPS: [f64; 5] = [1.5, 3.0, 6.0, 12.0, 24.0];
pub const DEFAULT_BANDWIDTH_KBPS: f64 = 24.0;
pub const DEFAULT_CODEBOOK_SIZE: usize = 64;

/// Codebook count for a bandwidth: 1.5→2, 3→4, 6→8, 12→16, 24→32.
pub fn codebooks_for_bandwidth(kbps: f64) -> Result<usize> {
    BANDWIDTHS_KBPS
        .iter()
        .position(|&b| (b - kbps).abs() < 1e-9)
        .map(|i| 2usize << i)
        .ok_or_else(|| Error::InvalidArgument(format!("unsupported bandwidth {kbps} kbps (use 1.5, 3, 6, 12 or 24)")))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CodebookSet {
    pub dim: usize,
    /// Trained codewords per stage (the null codeword is extra).
    pub size: usize,
    /// `stages[s]` is `size × dim`, row-major.
    pub stages: Vec<Vec<f64>>,
}

impl CodebookSet {
    pub fn n_q(&self) -> usize {
        self.stages.len()
    }

    pub fn null_index(&self) -> u32 {
        self.size as u32
    }

    pub fn codeword(&self, stage: usize, index: u32) -> Option<&[f64]> {
        let i = index as usize;
        if i < self.size {
            Some(&self.stages[stage][i * self.dim..(i + 1) * self.dim])
        } else {
            None
        }
    }

    /// Nearest entry in index order; ties resolve to the lowest index.
    fn nearest(&self, stage: usize, r: &[f64], norms: &[f64]) -> u32 {
        let book = &self.stages[stage];
        let mut best = self.null_index();
        let mut best_d = f64::INFINITY; // ‖r - c‖² - ‖r‖²
        for k in 0..self.size {
            let c = &book[k * self.dim..(k + 1) * self.dim];
            let d = norms[k] - 2.0 * crate::linalg::dot(r, c);
            if d < best_d {
                best_d = d;
                best = k as u32;
            }
        }
        if best_d > 0.0 {
            best = self.null_index();
        }
        best
    }

    fn norms(&self) -> Vec<Vec<f64>> {
        self.stages
            .iter()
            .map(|b| b.chunks(self.dim).map(|c| c.iter().map(|v| v * v).sum()).collect())
            .collect()
    }

    fn check_finite(&self) -> Result<()> {
        if self.stages.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("codebook contains non-finite values".into()));
        }
        Ok(())
    }
}

/// Stage-major index grid: `indices[stage * frames + frame]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexGrid {
    pub n_q: usize,
    pub frames: usize,
    pub indices: Vec<u32>,
}

/// Quantizes frame-major vectors (`frames × dim`).
pub fn quantize_frames(frames: &[f64], dim: usize, books: &CodebookSet) -> Result<IndexGrid> {
    if dim != books.dim || !frames.len().is_multiple_of(dim) {
        return Err(Error::Shape(format!("frames of dimension {dim} vs codebooks of dimension {}", books.dim)));
    }
    let count = frames.len() / dim;
    let norms = books.norms();
    let per_frame: Vec<Vec<u32>> = par::map_range(ExecPolicy::Parallel, count, |f| {
        let mut r = frames[f * dim..(f + 1) * dim].to_vec();
        (0..books.n_q())
            .map(|s| {
                let idx = books.nearest(s, &r, &norms[s]);
                if let Some(c) = books.codeword(s, idx) {
                    r.iter_mut().zip(c).for_each(|(a, b)| *a -= b);
                }
                idx
            })
            .collect()
    });
    let mut indices = vec![0u32; books.n_q() * count];
    for (f, idx) in per_frame.iter().enumerate() {
        for (s, &i) in idx.iter().enumerate() {
            indices[s * count + f] = i;
        }
    }
    Ok(IndexGrid { n_q: books.n_q(), frames: count, indices })
}

/// Sum of the selected codewords per frame, frame-major.
pub fn dequantize_frames(grid: &IndexGrid, books: &CodebookSet) -> Result<Vec<f64>> {
    if grid.n_q > books.n_q() {
        return Err(Error::Shape(format!("grid has {} stages, codebooks {}", grid.n_q, books.n_q())));
    }
    let dim = books.dim;
    let mut out = vec![0.0; grid.frames * dim];
    for s in 0..grid.n_q {
        for f in 0..grid.frames {
            let idx = grid.indices[s * grid.frames + f];
            if idx > books.null_index() {
                return Err(Error::InvalidArgument(format!(
                    "index {idx} out of range at stage {s}, frame {f} (codebook size {})",
                    books.size
                )));
            }
            if let Some(c) = books.codeword(s, idx) {
                out[f * dim..(f + 1) * dim].iter_mut().zip(c).for_each(|(o, v)| *o += v);
            }
        }
    }
    Ok(out)
}

/// Residual energy of one frame before stage 1 and after each stage.
pub fn residual_energies(frame: &[f64], books: &CodebookSet) -> Vec<f64> {
    let norms = books.norms();
    let mut r = frame.to_vec();
    let mut out = vec![r.iter().map(|v| v * v).sum()];
    for s in 0..books.n_q() {
        let idx = books.nearest(s, &r, &norms[s]);
        if let Some(c) = books.codeword(s, idx) {
            r.iter_mut().zip(c).for_each(|(a, b)| *a -= b);
        }
        out.push(r.iter().map(|v| v * v).sum());
    }
    out
}

pub fn rvq_quantize(latent: &LatentTensor, books: &CodebookSet) -> Result<IndexGrid> {
    if latent.layout != super::Layout::Flat {
        return Err(Error::Shape("RVQ expects a flat latent".into()));
    }
    books.check_finite()?;
    quantize_frames(&latent.frame_vectors(), LATENT_DIM, books)
}

pub fn rvq_dequantize(grid: &IndexGrid, books: &CodebookSet) -> Result<LatentTensor> {
    if books.dim != LATENT_DIM {
        return Err(Error::Shape(format!("codebooks of dimension {} cannot form a latent", books.dim)));
    }
    LatentTensor::from_frame_vectors(grid.frames, &dequantize_frames(grid, books)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KMeansParams {
    pub iterations: usize,
    pub seed: u64,
    /// Frames used for training are subsampled to at most this many.
    pub max_frames: usize,
}

impl Default for KMeansParams {
    fn default() -> Self {
        KMeansParams { iterations: 10, seed: 0, max_frames: 4096 }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by a fixed number of Lloyd iterations.
fn kmeans(data: &[f64], dim: usize, k: usize, iterations: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = data.len() / dim;
    let point = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(point(rng.random_range(0..n)));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(point(i), &centroids[..dim])).collect();
    for _ in 1..k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            Err(_) => rng.random_range(0..n), // all points coincide with centroids
        };
        centroids.extend_from_slice(point(next));
        let c = &centroids[centroids.len() - dim..];
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(point(i), c));
        }
    }

    for _ in 0..iterations {
        let assign: Vec<usize> = par::map_range(ExecPolicy::Parallel, n, |i| {
            let p = point(i);
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let d = sq_dist(p, &centroids[c * dim..(c + 1) * dim]);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            best
        });
        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (i, &a) in assign.iter().enumerate() {
            counts[a] += 1;
            sums[a * dim..(a + 1) * dim].iter_mut().zip(point(i)).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
    }
    centroids
}

/// Stage-wise k-means on residuals of frame-major training vectors.
pub fn train_codebooks_from_frames(
    frames: &[f64],
    dim: usize,
    n_q: usize,
    k: usize,
    params: &KMeansParams,
) -> Result<CodebookSet> {
    if dim == 0 || !frames.len().is_multiple_of(dim) {
        return Err(Error::Shape(format!("{} values are not whole {dim}-d frames", frames.len())));
    }
    if n_q == 0 || k == 0 {
        return Err(Error::InvalidArgument("need at least one stage and one codeword".into()));
    }
    let count = frames.len() / dim;
    if count < k {
        return Err(Error::InvalidArgument(format!("{count} training frames is fewer than K = {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut data = if count > params.max_frames.max(k) {
        let take = params.max_frames.max(k);
        let mut chosen = rand::seq::index::sample(&mut rng, count, take).into_vec();
        chosen.sort_unstable();
        chosen.iter().flat_map(|&i| frames[i * dim..(i + 1) * dim].iter().copied()).collect()
    } else {
        frames.to_vec()
    };
    let iterations = params.iterations.max(1);
    let mut books = CodebookSet { dim, size: k, stages: Vec::with_capacity(n_q) };
    for s in 0..n_q {
        books.stages.push(kmeans(&data, dim, k, iterations, &mut rng));
        let norms: Vec<f64> = books.stages[s].chunks(dim).map(|c| c.iter().map(|v| v * v).sum()).collect();
        for r in data.chunks_mut(dim) {
            let idx = books.nearest(s, r, &norms);
            if let Some(c) = books.codeword(s, idx) {
                let c = c.to_vec();
                r.iter_mut().zip(&c).for_each(|(a, b)| *a -= b);
            }
        }
    }
    Ok(books)
}

/// Trains codebooks over every frame of a collection of flat latents.
pub fn train_codebooks<'a>(
    latents: impl IntoIterator<Item = &'a LatentTensor>,
    n_q: usize,
    k: usize,
    params: &KMeansParams,
) -> Result<CodebookSet> {
    let mut frames = Vec::new();
    for l in latents {
        if l.layout != super::Layout::Flat {
            return Err(Error::Shape("codebooks are trained on flat latents".into()));
        }
        frames.extend(l.frame_vectors());
    }
    train_codebooks_from_frames(&frames, LATENT_DIM, n_q, k, params)
}
