//! Synthetic machine-sound clips with structured metadata, WAV I/O, and the
//! dataset builder that lays clips out in train and evaluation manifests.

mod dataset;
mod metadata;
mod synth;
mod wav;

pub use dataset::{
    build_dataset, clip_seed, read_manifest, resolve_path, write_manifest, DatasetManifests,
    DatasetSpec, ManifestEntry, Split, MANIFEST_EVAL_GEN, MANIFEST_EVAL_REAL, MANIFEST_TRAIN,
};
pub use metadata::{AnomalyKind, Condition, MachineType, MetadataRecord, ANOMALY_KEY};
pub use synth::{severity, synthesize, vocabulary, AudioClip, Severity, LOWPASS_HZ};
pub use wav::{read_wav, write_wav};
