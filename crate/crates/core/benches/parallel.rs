use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use machsound::captions::{caption_from_metadata, encode_caption};
use machsound::codec::{self, NormStats};
use machsound::denoiser::{init_params, DenoiserConfig};
use machsound::par::{self, ExecPolicy};
use machsound::signalgen::{synthesize, Condition, MachineType, MetadataRecord};

const POLICIES: [(&str, ExecPolicy); 2] = [("sequential", ExecPolicy::Sequential), ("parallel", ExecPolicy::Parallel)];

fn clips() -> Vec<machsound::signalgen::AudioClip> {
    MachineType::ALL
        .iter()
        .flat_map(|&m| (0..4).map(move |s| MetadataRecord::new(m, Condition::Normal, &[], s).unwrap()))
        .map(|r| synthesize(&r, 1.0, 16000).unwrap())
        .collect()
}

fn encode_batch(c: &mut Criterion) {
    let clips = clips();
    let mut g = c.benchmark_group("codec_encode_20_clips");
    for (name, policy) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::try_map(policy, &clips, |x| codec::encode(black_box(x))).unwrap())
        });
    }
    g.finish();
}

fn denoise_batch(c: &mut Criterion) {
    let cfg = DenoiserConfig { base_width: 8, depth: 1, attn_dim: 16, heads: 2 };
    let params = init_params(&cfg, 0).unwrap();
    let clips = clips();
    let latents: Vec<_> = clips.iter().take(8).map(|x| codec::encode(x).unwrap()).collect();
    let stats = NormStats::compute(&latents).unwrap();
    let inputs: Vec<_> = latents
        .iter()
        .map(|l| {
            let z = l.reshape_to_diffusion(&stats).unwrap();
            machsound::trainer::crop_latent(&z, 0, 16).unwrap()
        })
        .collect();
    let rec = MetadataRecord::new(MachineType::Fan, Condition::Normal, &[], 0).unwrap();
    let cond = encode_caption(&caption_from_metadata(&rec));
    let mut g = c.benchmark_group("denoiser_forward_batch_8");
    g.sample_size(20);
    for (name, policy) in POLICIES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| par::try_map(policy, &inputs, |z| params.forward(black_box(z), 10, &cond)).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, encode_batch, denoise_batch);
criterion_main!(benches);
