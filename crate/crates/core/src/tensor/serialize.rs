//! Weight files: an 8-byte little-endian header length, a JSON header
//! listing every tensor, then the tensors as little-endian `f32`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{numel, ParamStore, Real};
use crate::error::{Error, Result};

pub const WEIGHTS_FORMAT: &str = "fsos-weights";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    tensors: Vec<Entry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset into the payload.
    offset: usize,
}

pub fn weights_to_bytes<T: Real>(store: &ParamStore<T>) -> Vec<u8> {
    let mut tensors = Vec::with_capacity(store.len());
    let mut payload = Vec::new();
    for (_, p) in store.iter() {
        tensors.push(Entry {
            name: p.name.clone(),
            shape: p.shape.clone(),
            offset: payload.len(),
        });
        for &v in &p.data {
            payload.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Header {
        format: WEIGHTS_FORMAT.into(),
        version: WEIGHTS_VERSION,
        tensors,
    })
    .expect("header serializes");
    let mut out = Vec::with_capacity(8 + header.len() + payload.len());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

/// Overwrite every parameter of `store` with the tensor of the same name.
/// Missing tensors, extra tensors and shape disagreements are errors.
pub fn weights_from_bytes<T: Real>(store: &mut ParamStore<T>, bytes: &[u8]) -> Result<()> {
    let corrupt = |m: String| Error::CorruptWeights(m);
    if bytes.len() < 8 {
        return Err(corrupt("file shorter than its length prefix".into()));
    }
    let hlen = u64::from_le_bytes(bytes[..8].try_into().unwrap()) as usize;
    let body = &bytes[8..];
    if hlen > body.len() {
        return Err(corrupt(format!("header length {hlen} exceeds file size")));
    }
    let header: Header =
        serde_json::from_slice(&body[..hlen]).map_err(|e| corrupt(format!("bad header: {e}")))?;
    if header.format != WEIGHTS_FORMAT || header.version != WEIGHTS_VERSION {
        return Err(corrupt(format!(
            "unsupported weights {} v{}",
            header.format, header.version
        )));
    }
    let payload = &body[hlen..];
    if header.tensors.len() != store.len() {
        return Err(corrupt(format!(
            "file has {} tensors, model expects {}",
            header.tensors.len(),
            store.len()
        )));
    }
    for e in &header.tensors {
        let id = store
            .find(&e.name)
            .ok_or_else(|| corrupt(format!("unexpected tensor {}", e.name)))?;
        let p = store.get_mut(id);
        if p.shape != e.shape {
            return Err(Error::ShapeMismatch(format!(
                "tensor {} has shape {:?}, model expects {:?}",
                e.name, e.shape, p.shape
            )));
        }
        let n = numel(&e.shape);
        let end = e
            .offset
            .checked_add(4 * n)
            .filter(|&end| end <= payload.len());
        let Some(end) = end else {
            return Err(corrupt(format!("tensor {} runs past the payload", e.name)));
        };
        for (d, chunk) in p
            .data
            .iter_mut()
            .zip(payload[e.offset..end].chunks_exact(4))
        {
            *d = T::of(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
        }
    }
    Ok(())
}

pub fn save_weights<T: Real>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    std::fs::write(path, weights_to_bytes(store)).map_err(|e| Error::io(path, e))
}

pub fn load_weights<T: Real>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    weights_from_bytes(store, &bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore<f32> {
        let mut s = ParamStore::new();
        s.add("a", &[2, 2], vec![1.0, -2.5, 3.25, 1e-7], true);
        s.add("bn.mean", &[3], vec![0.5, 0.0, -0.1], false);
        s
    }

    #[test]
    fn roundtrip_is_bit_exact() {
        let src = store();
        let bytes = weights_to_bytes(&src);
        let mut dst = store();
        dst.iter_mut()
            .for_each(|p| p.data.iter_mut().for_each(|v| *v = 0.0));
        weights_from_bytes(&mut dst, &bytes).unwrap();
        assert_eq!(src, dst);
        assert_eq!(weights_to_bytes(&dst), bytes);
    }

    #[test]
    fn damaged_files_are_rejected() {
        let bytes = weights_to_bytes(&store());
        let mut dst = store();
        assert!(matches!(
            weights_from_bytes(&mut dst, &bytes[..5]),
            Err(Error::CorruptWeights(_))
        ));
        assert!(weights_from_bytes(&mut dst, &bytes[..bytes.len() - 1]).is_err());
        let mut other = ParamStore::<f32>::new();
        other.add("a", &[4], vec![0.0; 4], true);
        other.add("bn.mean", &[3], vec![0.0; 3], false);
        assert!(matches!(
            weights_from_bytes(&mut other, &bytes),
            Err(Error::ShapeMismatch(_))
        ));
    }
}
