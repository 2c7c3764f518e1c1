//! Binary tensor container: magic, length-prefixed JSON header, then every
//! tensor as little-endian `f64` in header order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tensor::{Matrix, ParamSet};
use crate::error::{DstError, Result};

const MAGIC: &[u8; 8] = b"DSTLABv1";

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

pub fn write_tensors(path: impl AsRef<Path>, meta: serde_json::Value, params: &ParamSet) -> Result<()> {
    let path = path.as_ref();
    let header = Header {
        meta,
        tensors: params
            .ids()
            .map(|id| {
                let (rows, cols) = params.get(id).dim();
                TensorEntry {
                    name: params.name(id).to_string(),
                    rows,
                    cols,
                }
            })
            .collect(),
    };
    let header = serde_json::to_vec(&header).map_err(|e| DstError::Checkpoint(e.to_string()))?;
    let mut buf = Vec::with_capacity(16 + header.len() + params.num_scalars() * 8);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    for id in params.ids() {
        for v in params.get(id).iter() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut f = std::fs::File::create(path).map_err(|e| DstError::io(path, e))?;
    f.write_all(&buf).map_err(|e| DstError::io(path, e))
}

/// Returns the header metadata and the named tensors in file order.
pub fn read_tensors(path: impl AsRef<Path>) -> Result<(serde_json::Value, Vec<(String, Matrix)>)> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| DstError::io(path, e))?;
    let bad = |m: &str| DstError::Checkpoint(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| bad(&e.to_string()))?;
    let mut offset = 16 + hlen;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in header.tensors {
        let n = t.rows * t.cols;
        let raw = bytes.get(offset..offset + 8 * n).ok_or_else(|| bad("truncated tensor data"))?;
        let data: Vec<f64> = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.push((t.name, Matrix::from_shape_vec((t.rows, t.cols), data).unwrap()));
        offset += 8 * n;
    }
    if offset != bytes.len() {
        return Err(bad("trailing bytes"));
    }
    Ok((header.meta, tensors))
}

/// Copies tensors into `params`, requiring names and shapes to match exactly.
pub fn assign_tensors(params: &mut ParamSet, tensors: Vec<(String, Matrix)>) -> Result<()> {
    if tensors.len() != params.len() {
        return Err(DstError::Checkpoint(format!(
            "expected {} tensors, found {}",
            params.len(),
            tensors.len()
        )));
    }
    for (id, (name, value)) in params.ids().collect::<Vec<_>>().into_iter().zip(tensors) {
        if params.name(id) != name || params.get(id).dim() != value.dim() {
            return Err(DstError::Checkpoint(format!(
                "tensor {name} {:?} does not match {} {:?}",
                value.dim(),
                params.name(id),
                params.get(id).dim()
            )));
        }
        *params.get_mut(id) = value;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_is_exact() {
        let mut p = ParamSet::default();
        p.add("a", array![[1.5, -2.0], [f64::MIN_POSITIVE, 3.0e300]]);
        p.add("b", array![[0.1, 0.2, 0.3]]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        write_tensors(&path, serde_json::json!({"k": 1}), &p).unwrap();
        let (meta, tensors) = read_tensors(&path).unwrap();
        assert_eq!(meta["k"], 1);
        let mut q = p.clone();
        q.get_mut(super::super::tensor::ParamId(0)).fill(0.0);
        assign_tensors(&mut q, tensors).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        std::fs::write(&path, b"nope").unwrap();
        assert!(read_tensors(&path).is_err());
    }
}
