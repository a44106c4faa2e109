use std::fs;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use machsound::cli::{dispatch, report, CHECKPOINT_FILE, GENERATED_MANIFEST};
use machsound::codec::{LatentTensor, NormStats};
use machsound::diffusion::standard_normal;
use machsound::signalgen::{read_manifest, read_wav, resolve_path, Split};

const TINY: &str = "\
[dataset]
root_seed = 1
duration = 1.0
machines = [\"gearbox\"]
train_normal = 3
train_anomalous = 1
eval_normal = 2
eval_anomalous = 2

[prepare]
bandwidth_kbps = 1.5
codebook_size = 8

[train]
steps = 3
batch_size = 2
crop_frames = 16
checkpoint_interval = 0

[train.schedule]
steps = 5

[train.denoiser]
base_width = 8
depth = 1
attn_dim = 8
heads = 2
";

fn run(args: &[&str]) -> i32 {
    let mut argv = vec!["machsound"];
    argv.extend_from_slice(args);
    dispatch(argv)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// One shared tiny run: dataset, store and a 3-step checkpoint.
fn tiny_run() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let d = tempfile::tempdir().unwrap();
        let root = d.path();
        fs::write(root.join("tiny.toml"), TINY).unwrap();
        let c = root.join("tiny.toml");
        assert_eq!(run(&["dataset", "--config", s(&c), "--out", s(&root.join("data"))]), 0);
        assert_eq!(run(&["prepare", "--config", s(&c), "--manifest", s(&root.join("data/train.jsonl")), "--out", s(&root.join("store"))]), 0);
        assert_eq!(run(&["train", "--config", s(&c), "--store", s(&root.join("store")), "--out", s(&root.join("train"))]), 0);
        d
    })
    .path()
}

#[test]
fn caption_generation_writes_exact_lengths() {
    let root = tiny_run();
    let out = root.join("gen_caption");
    let ck = root.join("train").join(CHECKPOINT_FILE);
    let caption = "A fan model is running on over voltage with anomaly";
    let args = ["generate", "--checkpoint", s(&ck), "--caption", caption, "--count", "2", "--seed", "3", "--duration", "0.5", "--out", s(&out)];
    assert_eq!(run(&args), 0);
    let m = read_manifest(&out.join(GENERATED_MANIFEST)).unwrap();
    assert_eq!(m.len(), 2);
    assert_ne!(m[0].sample_seed, m[1].sample_seed);
    for e in &m {
        assert_eq!(e.caption.as_deref(), Some(caption));
        let clip = read_wav(&resolve_path(&out.join(GENERATED_MANIFEST), e).unwrap()).unwrap();
        assert_eq!((clip.samples.len(), clip.sample_rate), (8000, 16000));
    }
    let first = fs::read(out.join(m[0].path.as_ref().unwrap())).unwrap();
    assert_eq!(run(&args), 0);
    assert_eq!(fs::read(out.join(m[0].path.as_ref().unwrap())).unwrap(), first);
}

#[test]
fn zero_count_gives_empty_manifest() {
    let root = tiny_run();
    let out = root.join("gen_zero");
    let ck = root.join("train").join(CHECKPOINT_FILE);
    assert_eq!(run(&["generate", "--checkpoint", s(&ck), "--caption", "A valve", "--count", "0", "--out", s(&out)]), 0);
    assert!(read_manifest(&out.join(GENERATED_MANIFEST)).unwrap().is_empty());
}

#[test]
fn request_manifest_fills_only_missing_audio() {
    let root = tiny_run();
    let out = root.join("gen_requests");
    let ck = root.join("train").join(CHECKPOINT_FILE);
    let requests = root.join("data/eval_gen.jsonl");
    let before = fs::read(&requests).unwrap();
    assert_eq!(run(&["generate", "--checkpoint", s(&ck), "--manifest", s(&requests), "--out", s(&out)]), 0);
    assert_eq!(fs::read(&requests).unwrap(), before, "input manifest was modified");
    let m = read_manifest(&out.join(GENERATED_MANIFEST)).unwrap();
    assert_eq!(m.iter().filter(|e| e.split == Split::Generated).count(), 2);
    for e in &m {
        let p = resolve_path(&out.join(GENERATED_MANIFEST), e).unwrap();
        assert_eq!(read_wav(&p).unwrap().samples.len(), 16000, "{}", p.display());
    }
}

#[test]
fn caption_subcommand_adds_captions() {
    let root = tiny_run();
    let out = root.join("captioned");
    assert_eq!(run(&["caption", "--manifest", s(&root.join("data/train.jsonl")), "--out", s(&out)]), 0);
    let m = read_manifest(&out.join("train.jsonl")).unwrap();
    assert!(m.iter().all(|e| e.caption.as_deref().is_some_and(|c| c.starts_with("A gearbox"))));
    assert!(resolve_path(&out.join("train.jsonl"), &m[0]).unwrap().is_file());
}

#[test]
fn resume_matches_uninterrupted_training() {
    let root = tiny_run();
    let c = root.join("tiny.toml");
    let store = root.join("store");
    assert_eq!(run(&["train", "--config", s(&c), "--store", s(&store), "--steps", "1", "--out", s(&root.join("short"))]), 0);
    let resumed = root.join("resumed");
    let short = root.join("short").join(CHECKPOINT_FILE);
    assert_eq!(run(&["train", "--config", s(&c), "--store", s(&store), "--resume", s(&short), "--steps", "3", "--out", s(&resumed)]), 0);
    assert_eq!(fs::read(resumed.join(CHECKPOINT_FILE)).unwrap(), fs::read(root.join("train").join(CHECKPOINT_FILE)).unwrap());
}

#[test]
fn report_is_byte_stable() {
    let root = tiny_run();
    let gen = root.join("gen_report");
    let eval = root.join("eval_report");
    let ck = root.join("train").join(CHECKPOINT_FILE);
    let c = root.join("tiny.toml");
    assert_eq!(run(&["generate", "--checkpoint", s(&ck), "--manifest", s(&root.join("data/eval_gen.jsonl")), "--out", s(&gen)]), 0);
    let real = root.join("data/eval_real.jsonl");
    let g = gen.join(GENERATED_MANIFEST);
    assert_eq!(run(&["eval-gen", "--real", s(&real), "--generated", s(&g), "--out", s(&eval)]), 0);
    let train = root.join("data/train.jsonl");
    assert_eq!(run(&["eval-asd", "--config", s(&c), "--train", s(&train), "--real", s(&real), "--generated", s(&g), "--out", s(&eval)]), 0);
    let a = report(&eval).unwrap();
    assert_eq!(a, report(&eval).unwrap());
    assert!(a.contains("FAD") && a.contains("gearbox") && a.contains("rank correlation"));
    for f in ["metrics.json", "asd.json"] {
        let v: serde_json::Value = serde_json::from_str(&fs::read_to_string(eval.join(f)).unwrap()).unwrap();
        assert_eq!(v["schema_version"], 1);
    }
}

#[test]
fn binary_errors_are_single_line_with_kind() {
    let bin = env!("CARGO_BIN_EXE_machsound");
    let o = Command::new(bin).arg("frobnicate").output().unwrap();
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.starts_with("error: usage:"), "{err}");
    assert!(err.contains("Usage:"), "{err}");

    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(bin).args(["report", "--run", s(dir.path())]).output().unwrap();
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    let lines: Vec<&str> = err.lines().filter(|l| l.starts_with("error:")).collect();
    assert_eq!(lines.len(), 1, "{err}");
    assert!(lines[0].starts_with("error: missing-inputs:") && lines[0].contains("metrics.json"), "{err}");

    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[train]\nstepz = 3\n").unwrap();
    let o = Command::new(bin).args(["train", "--config", s(&bad), "--print-config"]).output().unwrap();
    assert!(String::from_utf8_lossy(&o.stderr).contains("error: config:"));
}

#[test]
fn run_root_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "[dataset]\nduration = 0.25\nmachines = [\"fan\"]\ntrain_normal = 1\neval_normal = 1\neval_anomalous = 1\n").unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_machsound"))
        .args(["dataset", "--config", s(&cfg)])
        .env("MACHSOUND_RUN_ROOT", dir.path().join("runs"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("runs/dataset/train.jsonl").is_file());
    assert!(dir.path().join("runs/dataset/dataset.config.toml").is_file());
}

#[test]
fn print_config_lists_every_section() {
    let o = Command::new(env!("CARGO_BIN_EXE_machsound")).args(["dataset", "--print-config"]).output().unwrap();
    let text = String::from_utf8(o.stdout).unwrap();
    for section in ["[dataset]", "[prepare]", "[train]", "[train.schedule]", "[train.denoiser]", "[generate]", "[detector]"] {
        assert!(text.contains(section), "{section} missing from\n{text}");
    }
    let back: machsound::cli::RunConfig = toml::from_str(&text).unwrap();
    assert_eq!(back, machsound::cli::RunConfig::default());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn reshape_is_a_bijection(seed in any::<u64>(), frames in 1usize..40) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = LatentTensor::flat(frames, standard_normal(128 * frames, &mut rng)).unwrap();
        let id = NormStats::identity();
        let d = z.reshape_to_diffusion(&id).unwrap();
        for r in 0..128 {
            for f in 0..frames {
                prop_assert_eq!(d.diffusion_at(r / 8, r % 8, f), z.flat_at(r, f));
            }
        }
        prop_assert_eq!(d.reshape_to_flat(&id).unwrap(), z.clone());
        let stats = NormStats::compute([&z]).unwrap();
        let back = z.reshape_to_diffusion(&stats).unwrap().reshape_to_flat(&stats).unwrap();
        for (a, b) in back.values.iter().zip(&z.values) {
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }
}
