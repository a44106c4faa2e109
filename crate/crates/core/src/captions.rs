//! Caption templates over clip metadata, and the hash-based caption encoder
//! that produces 768-d condition token vectors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use crate::signalgen::{Condition, MachineType, MetadataRecord};

/// Width of every condition token vector.
pub const COND_DIM: usize = 768;

#[derive(Debug, Clone, PartialEq)]
pub struct Caption {
    pub text: String,
    pub source: Option<MetadataRecord>,
}

fn subject(m: &MetadataRecord) -> String {
    match m.machine {
        MachineType::Bearing => "A bearing".to_string(),
        MachineType::Gearbox => match m.get("model") {
            Some(v) if !v.is_empty() => format!("A gearbox model {v}"),
            _ => "A gearbox".to_string(),
        },
        MachineType::Fan => match m.get("model") {
            Some("") => "A fan model".to_string(),
            Some(v) => format!("A fan model {v}"),
            None => "A fan".to_string(),
        },
        MachineType::SlideRail => match m.get("type") {
            Some(v) if !v.is_empty() => format!("A {v} slider"),
            _ => "A slider".to_string(),
        },
        MachineType::Valve => {
            let mut s = "A valve".to_string();
            if let Some(p) = m.get("pattern") {
                s.push_str(&format!(" of moving pattern {p}"));
            }
            if let Some(v) = m.get("surroundings") {
                s.push_str(&format!(" in {v} surroundings"));
            }
            s
        }
    }
}

/// Keys folded into the subject or a trailing clause rather than the
/// "operating on ..." list.
fn structural_keys(machine: MachineType) -> &'static [&'static str] {
    match machine {
        MachineType::Bearing => &["location"],
        MachineType::Gearbox | MachineType::Fan => &["model"],
        MachineType::SlideRail => &["type"],
        MachineType::Valve => &["pattern", "surroundings"],
    }
}

fn condition_phrase(key: &str, value: &str) -> String {
    match key {
        "acceleration" => format!("an acceleration of {value}"),
        _ => format!("{key} of {value}"),
    }
}

/// Expands the machine's caption template. Operating conditions appear in
/// the record's attribute order; absent attributes are left out.
pub fn caption_from_metadata(m: &MetadataRecord) -> Caption {
    let mut text = subject(m);
    let structural = structural_keys(m.machine);
    let ops: Vec<String> = m
        .attributes
        .iter()
        .filter(|(k, _)| k != "anomaly" && !structural.contains(&k.as_str()))
        .map(|(k, v)| condition_phrase(k, v))
        .collect();
    let anomaly = m.anomaly().filter(|_| m.condition == Condition::Anomalous);

    if m.machine == MachineType::Fan {
        match anomaly {
            Some(a) => text.push_str(&format!(" is running on {a} with anomaly")),
            None => text.push_str(" is running normally"),
        }
        if !ops.is_empty() {
            text.push_str(&format!(" at {}", ops.join(" and ")));
        }
    } else {
        if !ops.is_empty() {
            text.push_str(" operating on ");
            text.push_str(&ops.join(" and "));
        }
        if let Some(a) = anomaly {
            if m.machine == MachineType::SlideRail {
                text.push_str(&format!(" is with an anomaly due to {a}"));
            } else {
                text.push_str(&format!(" with anomaly due to {a}"));
            }
        }
        if m.machine == MachineType::Bearing {
            if let Some(l) = m.get("location") {
                text.push_str(&format!(" at location {l}"));
            }
        }
    }
    Caption { text, source: Some(m.clone()) }
}

/// Recovers machine type and condition from a caption produced by
/// [`caption_from_metadata`].
pub fn parse_caption(text: &str) -> Option<(MachineType, Condition)> {
    let tokens = tokenize(text);
    let machine = tokens.iter().find_map(|t| match t.as_str() {
        "bearing" => Some(MachineType::Bearing),
        "gearbox" => Some(MachineType::Gearbox),
        "fan" => Some(MachineType::Fan),
        "slider" => Some(MachineType::SlideRail),
        "valve" => Some(MachineType::Valve),
        _ => None,
    })?;
    let condition = if tokens.iter().any(|t| t == "anomaly") { Condition::Anomalous } else { Condition::Normal };
    Some((machine, condition))
}

/// Lower-cased split on whitespace and punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Sequence of unit-norm 768-d token vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionEmbedding {
    pub values: Vec<f32>,
    pub token_count: usize,
}

impl ConditionEmbedding {
    pub fn token(&self, i: usize) -> &[f32] {
        &self.values[i * COND_DIM..(i + 1) * COND_DIM]
    }

    pub fn dim(&self) -> usize {
        COND_DIM
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| v as f64).collect()
    }

    /// Mean of the token vectors.
    pub fn mean_pool(&self) -> Vec<f64> {
        let mut out = vec![0.0; COND_DIM];
        for i in 0..self.token_count {
            for (o, &v) in out.iter_mut().zip(self.token(i)) {
                *o += v as f64;
            }
        }
        out.iter_mut().for_each(|v| *v /= self.token_count as f64);
        out
    }
}

/// Maps captions to condition embeddings. The hash encoder is the built-in
/// implementation; a learned encoder can be dropped in behind this trait.
pub trait TextEncoder: Send + Sync {
    fn id(&self) -> &str;
    fn encode(&self, caption: &str) -> ConditionEmbedding;
}

/// Stateless encoder assigning each token a fixed pseudo-random unit vector
/// seeded by the SHA-256 of the token string.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashEncoder;

pub fn token_hash(token: &str) -> [u8; 32] {
    Sha256::digest(token.as_bytes()).into()
}

pub fn token_vector(token: &str) -> Vec<f32> {
    let mut rng = ChaCha8Rng::from_seed(token_hash(token));
    let v: Vec<f64> = (0..COND_DIM).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| (x / norm) as f32).collect()
}

impl TextEncoder for HashEncoder {
    fn id(&self) -> &str {
        "hash-v1"
    }

    fn encode(&self, caption: &str) -> ConditionEmbedding {
        let mut tokens = tokenize(caption);
        if tokens.is_empty() {
            tokens.push("<empty>".to_string());
        }
        let mut values = Vec::with_capacity(tokens.len() * COND_DIM);
        for t in &tokens {
            values.extend(token_vector(t));
        }
        ConditionEmbedding { values, token_count: tokens.len() }
    }
}

pub fn encode_caption(caption: &Caption) -> ConditionEmbedding {
    HashEncoder.encode(&caption.text)
}
