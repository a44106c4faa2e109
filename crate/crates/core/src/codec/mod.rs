//! Codec stand-in: a lapped filterbank between waveforms and 128-row frame
//! latents, residual vector quantization with selectable codebook count, and
//! the reversible reshape/normalization into the 16-channel diffusion layout.

mod latent;
mod mdct;
mod rvq;

pub use latent::{Layout, LatentTensor, NormStats, CHANNELS, CHANNEL_ROWS};
pub use mdct::{decode, encode, frames_for_samples, CODEC_RATE, HOP, LATENT_DIM};
pub use rvq::{
    codebooks_for_bandwidth, dequantize_frames, quantize_frames, residual_energies, rvq_dequantize,
    rvq_quantize, train_codebooks, train_codebooks_from_frames, CodebookSet, IndexGrid, KMeansParams,
    BANDWIDTHS_KBPS, DEFAULT_BANDWIDTH_KBPS, DEFAULT_CODEBOOK_SIZE,
};
