//! Conditional latent-diffusion generation of machine sounds, and the
//! evaluation harness that checks whether generated anomalies can stand in
//! for recorded ones when testing an anomalous-sound detector.
//!
//! The pipeline, stage by stage:
//!
//! 1. [`signalgen`] synthesizes labelled machine clips and writes manifests.
//! 2. [`captions`] turns clip metadata into captions and caption embeddings.
//! 3. [`codec`] maps waveforms to 128-row frame latents, applies residual
//!    vector quantization, and reshapes latents into the 16-channel layout.
//! 4. [`diffusion`] and [`denoiser`] hold the DDPM machinery and the noise
//!    prediction network; [`trainer`] fits it and manages checkpoints.
//! 5. [`metrics`] and [`asd`] score generated audio and run the detector
//!    comparison; [`cli`] wires everything into subcommands.

pub mod asd;
pub mod captions;
pub mod cli;
pub mod codec;
pub mod denoiser;
pub mod diffusion;
pub mod dsp;
pub mod error;
pub mod linalg;
pub mod metrics;
pub mod par;
pub mod signalgen;
pub mod trainer;

pub use error::{Error, Result};

/// Schema version written into every JSON artifact.
pub const SCHEMA_VERSION: u32 = 1;
