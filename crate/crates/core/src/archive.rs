//! Single-file array archive: an 8-byte magic, a little-endian `u64` header
//! length, a JSON header, then the arrays as little-endian `f64`.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;

const MAGIC: &[u8; 8] = b"SDARCH01";

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    arrays: Vec<Entry>,
}

pub fn encode(meta: &serde_json::Value, arrays: &[(String, &Tensor)]) -> Result<Vec<u8>> {
    let mut entries = Vec::with_capacity(arrays.len());
    let mut offset = 0;
    for (name, t) in arrays {
        entries.push(Entry { name: name.clone(), shape: t.shape().to_vec(), offset });
        offset += t.len();
    }
    let header = serde_json::to_vec(&Header { meta: meta.clone(), arrays: entries })?;
    let mut out = Vec::with_capacity(16 + header.len() + offset * 8);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in arrays {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<(serde_json::Value, Vec<(String, Tensor)>)> {
    let bad = |m: &str| Error::Checkpoint(format!("malformed archive: {m}"));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("missing magic"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..body])?;
    let data = &bytes[body..];
    let mut arrays = Vec::with_capacity(header.arrays.len());
    for e in header.arrays {
        let n: usize = e.shape.iter().product();
        let start = e.offset * 8;
        let end = start + n * 8;
        if end > data.len() {
            return Err(bad(&format!("array {} out of bounds", e.name)));
        }
        let vals = data[start..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        arrays.push((e.name, Tensor::new(e.shape, vals)));
    }
    Ok((header.meta, arrays))
}

/// Writes `bytes` to a sibling temp file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(format!(".tmp{}", std::process::id()));
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save(path: &Path, meta: &serde_json::Value, arrays: &[(String, &Tensor)]) -> Result<()> {
    write_atomic(path, &encode(meta, arrays)?)
}

pub fn load(path: &Path) -> Result<(serde_json::Value, Vec<(String, Tensor)>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let a = Tensor::new(vec![2, 3], vec![1.0, -0.0, f64::MIN_POSITIVE, 1e300, -3.25, 0.1]);
        let b = Tensor::new(vec![1], vec![42.0]);
        let meta = serde_json::json!({"kind": "test", "n": 2});
        let bytes = encode(&meta, &[("a".into(), &a), ("b".into(), &b)]).unwrap();
        let (m, arrays) = decode(&bytes).unwrap();
        assert_eq!(m, meta);
        assert_eq!(arrays[0].1.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(arrays[1], ("b".to_string(), b));
    }

    #[test]
    fn rejects_garbage() {
        assert!(decode(b"not an archive at all").is_err());
        let a = Tensor::new(vec![4], vec![1.0; 4]);
        let bytes = encode(&serde_json::json!({}), &[("a".into(), &a)]).unwrap();
        assert!(decode(&bytes[..bytes.len() - 3]).is_err());
    }
}
