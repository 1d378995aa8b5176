//! Self-describing checkpoint container shared by every model.
//!
//! Layout: `b"SBCK"` magic, u32 LE format version, u64 LE header length,
//! JSON header (kind + model config + tensor table), then one little-endian
//! f64 blob per tensor in table order. Serialization is byte-deterministic
//! for identical state, which the frozen-extractor tests rely on.

use crate::nn::Tensor;
use crate::{Error, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: [u8; 4] = *b"SBCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TensorMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    config: serde_json::Value,
    tensors: Vec<TensorMeta>,
}

/// A decoded checkpoint: model kind, config header, and named tensors.
#[derive(Debug)]
pub struct Container {
    pub kind: String,
    pub config: serde_json::Value,
    entries: Vec<(TensorMeta, Vec<f64>)>,
}

impl Container {
    pub fn new(kind: &str, config: &impl Serialize) -> Result<Self> {
        Ok(Self {
            kind: kind.to_string(),
            config: serde_json::to_value(config)
                .map_err(|e| Error::Checkpoint(format!("config serialization: {e}")))?,
            entries: Vec::new(),
        })
    }

    pub fn push(&mut self, name: String, shape: Vec<usize>, data: Vec<f64>) {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.entries.push((TensorMeta { name, shape }, data));
    }

    pub fn tensor(&self, name: &str) -> Option<(&[usize], &[f64])> {
        self.entries
            .iter()
            .find(|(meta, _)| meta.name == name)
            .map(|(meta, data)| (meta.shape.as_slice(), data.as_slice()))
    }

    pub fn tensor_count(&self) -> usize {
        self.entries.len()
    }

    pub fn config_as<T: DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.config.clone())
            .map_err(|e| Error::Checkpoint(format!("config decode: {e}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            version: FORMAT_VERSION,
            kind: self.kind.clone(),
            config: self.config.clone(),
            tensors: self.entries.iter().map(|(m, _)| m.clone()).collect(),
        };
        let header_json = serde_json::to_vec(&header).expect("header serialization");
        let blob_len: usize = self.entries.iter().map(|(_, d)| d.len() * 8).sum();
        let mut out = Vec::with_capacity(16 + header_json.len() + blob_len);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header_json.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_json);
        for (_, data) in &self.entries {
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let err = |msg: &str| Error::Checkpoint(msg.to_string());
        if bytes.len() < 16 {
            return Err(err("truncated container"));
        }
        if bytes[..4] != MAGIC {
            return Err(err("bad magic; not a checkpoint container"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported container version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| err("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| Error::Checkpoint(format!("header decode: {e}")))?;
        if header.version != FORMAT_VERSION {
            return Err(err("header/container version mismatch"));
        }
        let mut offset = header_end;
        let mut entries = Vec::with_capacity(header.tensors.len());
        for meta in header.tensors {
            let numel: usize = meta.shape.iter().product();
            let end = offset
                .checked_add(numel * 8)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| Error::Checkpoint(format!("truncated blob for {}", meta.name)))?;
            let data: Vec<f64> = bytes[offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset = end;
            entries.push((meta, data));
        }
        if offset != bytes.len() {
            return Err(err("trailing bytes after tensor blobs"));
        }
        Ok(Self {
            kind: header.kind,
            config: header.config,
            entries,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(&self.to_bytes())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut bytes = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Collects a model's state (parameters and buffers) through its visitor
/// into container entries.
pub fn collect_state(
    visit: impl FnOnce(&mut dyn FnMut(String, &mut Tensor)),
    container: &mut Container,
) {
    let mut sink = |name: String, t: &mut Tensor| {
        container.push(name, t.shape().to_vec(), t.data().to_vec());
    };
    visit(&mut sink);
}

/// Restores a model's state by name lookup; shape mismatches and missing
/// tensors fail loudly.
pub fn restore_state(
    visit: impl FnOnce(&mut dyn FnMut(String, &mut Tensor)),
    container: &Container,
) -> Result<()> {
    let mut failure: Option<Error> = None;
    let mut sink = |name: String, t: &mut Tensor| {
        if failure.is_some() {
            return;
        }
        match container.tensor(&name) {
            None => failure = Some(Error::Checkpoint(format!("missing tensor {name}"))),
            Some((shape, data)) => {
                if shape != t.shape() {
                    failure = Some(Error::Checkpoint(format!(
                        "tensor {name}: shape {:?} in container, {:?} in model",
                        shape,
                        t.shape()
                    )));
                } else {
                    t.data_mut().copy_from_slice(data);
                }
            }
        }
    };
    visit(&mut sink);
    match failure {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[derive(Serialize, Deserialize)]
    struct DummyCfg {
        dim: usize,
    }

    #[test]
    fn roundtrip_preserves_everything() {
        let mut c = Container::new("dummy", &DummyCfg { dim: 3 }).unwrap();
        c.push("w".into(), vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        c.push("b".into(), vec![2], vec![-0.25, 0.75]);
        let bytes = c.to_bytes();
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back.kind, "dummy");
        assert_eq!(back.config_as::<DummyCfg>().unwrap().dim, 3);
        let (shape, data) = back.tensor("w").unwrap();
        assert_eq!(shape, &[2, 3]);
        assert_eq!(data, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        // Determinism: same state, same bytes.
        assert_eq!(bytes, back.to_bytes());
    }

    #[test]
    fn rejects_corrupt_containers() {
        assert!(Container::from_bytes(b"nope").is_err());
        let mut c = Container::new("dummy", &DummyCfg { dim: 1 }).unwrap();
        c.push("w".into(), vec![1], vec![1.0]);
        let mut bytes = c.to_bytes();
        bytes[0] = b'X';
        assert!(Container::from_bytes(&bytes).is_err());
        let mut truncated = c.to_bytes();
        truncated.pop();
        assert!(Container::from_bytes(&truncated).is_err());
        let mut versioned = c.to_bytes();
        versioned[4] = 99;
        assert!(matches!(
            Container::from_bytes(&versioned),
            Err(Error::Checkpoint(_))
        ));
    }
}
