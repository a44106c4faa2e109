//! Single-file tensor container: 8-byte magic, u32 format version, u64 header
//! length, a JSON header, then contiguous little-endian f64 payload. The
//! header lists every tensor's name, shape and element offset.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        Tensor { name: name.into(), shape, data }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    meta: Value,
    tensors: Vec<TensorEntry>,
}

pub fn write_container(path: &Path, magic: &[u8; 8], meta: Value, tensors: &[Tensor]) -> Result<()> {
    let mut entries = Vec::with_capacity(tensors.len());
    let mut offset = 0;
    for t in tensors {
        if t.shape.iter().product::<usize>() != t.data.len() {
            return Err(Error::Shape(format!("tensor {} has shape {:?} but {} values", t.name, t.shape, t.data.len())));
        }
        entries.push(TensorEntry { name: t.name.clone(), shape: t.shape.clone(), dtype: "f64".into(), offset });
        offset += t.data.len();
    }
    let header = serde_json::to_vec(&Header { meta, tensors: entries })?;
    let mut buf = Vec::with_capacity(20 + header.len() + offset * 8);
    buf.extend_from_slice(magic);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for t in tensors {
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    // write-then-rename keeps the previous file intact if writing fails
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_container(path: &Path, magic: &[u8; 8]) -> Result<(Value, Vec<Tensor>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let corrupt = |m: &str| Error::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 20 || &bytes[..8] != magic {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch { found: version, supported: FORMAT_VERSION });
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = bytes.get(20..).ok_or_else(|| corrupt("truncated"))?;
    if hlen > body.len() {
        return Err(corrupt("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| corrupt(&format!("header: {e}")))?;
    let payload = &body[hlen..];
    if payload.len() % 8 != 0 {
        return Err(corrupt("payload is not whole f64 values"));
    }
    let values: Vec<f64> = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        if e.dtype != "f64" {
            return Err(corrupt(&format!("tensor {} has unsupported dtype {}", e.name, e.dtype)));
        }
        let n: usize = e.shape.iter().product();
        let data = values.get(e.offset..e.offset + n).ok_or_else(|| corrupt(&format!("tensor {} out of bounds", e.name)))?;
        tensors.push(Tensor { name: e.name, shape: e.shape, data: data.to_vec() });
    }
    Ok((header.meta, tensors))
}

#[cfg(test)]
mod tests {
    use super::*;

    const MAGIC: &[u8; 8] = b"TESTCONT";

    #[test]
    fn round_trip_and_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.bin");
        let ts = vec![Tensor::new("a", vec![2, 2], vec![1.0, -0.5, f64::MIN_POSITIVE, 3.25]), Tensor::new("b", vec![1], vec![7.0])];
        write_container(&p, MAGIC, serde_json::json!({"x": 0.1}), &ts).unwrap();
        let (meta, back) = read_container(&p, MAGIC).unwrap();
        assert_eq!(meta["x"], 0.1);
        assert_eq!(back, ts);

        let mut bytes = fs::read(&p).unwrap();
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        fs::write(&p, &bytes).unwrap();
        assert!(matches!(read_container(&p, MAGIC), Err(Error::VersionMismatch { found: 2, .. })));
        assert!(matches!(read_container(&p, b"OTHERMAG"), Err(Error::Checkpoint(_))));
        fs::write(&p, &bytes[..30]).unwrap();
        assert!(read_container(&p, MAGIC).is_err());
        assert!(write_container(&p, MAGIC, Value::Null, &[Tensor::new("bad", vec![3], vec![1.0])]).is_err());
    }
}
