//! Self-describing checkpoint container.
//!
//! One format for every model artifact (censors, encoder, policy):
//! a magic tag, a JSON metadata document (kind, hyperparameters, tensor
//! manifest), then raw little-endian f32 tensor payloads in manifest order.
//! Writing is fully deterministic, so identical models produce identical
//! files.

use crate::{Error, Result};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

const MAGIC: &[u8; 8] = b"AMOEBA01";

#[derive(Debug, Clone)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(name: &str, shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor {name}: shape/data mismatch");
        Tensor { name: name.to_string(), shape, data }
    }
}

/// A checkpoint: arbitrary JSON metadata plus named tensors.
#[derive(Debug, Clone)]
pub struct TensorFile {
    pub meta: serde_json::Value,
    pub tensors: Vec<Tensor>,
}

impl TensorFile {
    pub fn new(meta: serde_json::Value) -> Self {
        TensorFile { meta, tensors: Vec::new() }
    }

    pub fn push(&mut self, t: Tensor) {
        self.tensors.push(t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|t| t.name == name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))
    }

    /// String field from the metadata document.
    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .and_then(|v| v.as_str())
            .ok_or_else(|| Error::Checkpoint(format!("missing meta field {key:?}")))
    }

    pub fn meta_u64(&self, key: &str) -> Result<u64> {
        self.meta
            .get(key)
            .and_then(|v| v.as_u64())
            .ok_or_else(|| Error::Checkpoint(format!("missing meta field {key:?}")))
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        self.meta
            .get(key)
            .and_then(|v| v.as_f64())
            .ok_or_else(|| Error::Checkpoint(format!("missing meta field {key:?}")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        let manifest: Vec<serde_json::Value> = self
            .tensors
            .iter()
            .map(|t| serde_json::json!({ "name": t.name, "shape": t.shape }))
            .collect();
        let mut meta = self.meta.clone();
        meta["tensors"] = serde_json::Value::Array(manifest);
        let meta_bytes = serde_json::to_vec(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?;
        w.write_all(MAGIC)?;
        w.write_all(&(meta_bytes.len() as u64).to_le_bytes())?;
        w.write_all(&meta_bytes)?;
        for t in &self.tensors {
            for x in &t.data {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint(format!("{}: not a checkpoint file", path.display())));
        }
        let mut len8 = [0u8; 8];
        r.read_exact(&mut len8)?;
        let meta_len = u64::from_le_bytes(len8) as usize;
        let mut meta_bytes = vec![0u8; meta_len];
        r.read_exact(&mut meta_bytes)?;
        let meta: serde_json::Value =
            serde_json::from_slice(&meta_bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let manifest = meta
            .get("tensors")
            .and_then(|v| v.as_array())
            .ok_or_else(|| Error::Checkpoint("missing tensor manifest".into()))?
            .clone();
        let mut tensors = Vec::with_capacity(manifest.len());
        for entry in &manifest {
            let name = entry
                .get("name")
                .and_then(|v| v.as_str())
                .ok_or_else(|| Error::Checkpoint("manifest entry without name".into()))?;
            let shape: Vec<usize> = entry
                .get("shape")
                .and_then(|v| v.as_array())
                .ok_or_else(|| Error::Checkpoint("manifest entry without shape".into()))?
                .iter()
                .map(|x| x.as_u64().unwrap_or(0) as usize)
                .collect();
            let n: usize = shape.iter().product();
            let mut buf = vec![0u8; n * 4];
            r.read_exact(&mut buf).map_err(|_| {
                Error::Checkpoint(format!("truncated payload for tensor {name:?}"))
            })?;
            let data: Vec<f32> = buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(Tensor::new(name, shape, data));
        }
        Ok(TensorFile { meta, tensors })
    }
}

/// FNV-1a over a tensor set; used to assert parameters stay frozen.
pub fn params_checksum(tensors: &[Tensor]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut eat = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for t in tensors {
        for b in t.name.as_bytes() {
            eat(*b);
        }
        for x in &t.data {
            for b in x.to_le_bytes() {
                eat(b);
            }
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.bin");
        let mut tf = TensorFile::new(serde_json::json!({"kind": "demo", "h": 4}));
        tf.push(Tensor::new("w", vec![2, 3], vec![1.0, -2.5, 3.0, 0.0, 5.5, -6.25]));
        tf.push(Tensor::new("b", vec![3], vec![0.5, 0.25, -0.125]));
        tf.save(&path).unwrap();
        let back = TensorFile::load(&path).unwrap();
        assert_eq!(back.meta_str("kind").unwrap(), "demo");
        assert_eq!(back.meta_u64("h").unwrap(), 4);
        assert_eq!(back.get("w").unwrap().shape, vec![2, 3]);
        assert_eq!(back.get("w").unwrap().data, tf.get("w").unwrap().data);
        assert_eq!(back.get("b").unwrap().data, tf.get("b").unwrap().data);
        assert_eq!(params_checksum(&tf.tensors), params_checksum(&back.tensors));
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.bin");
        std::fs::write(&path, b"NOTAMODEL-----").unwrap();
        assert!(matches!(TensorFile::load(&path), Err(Error::Checkpoint(_))));
    }
}
