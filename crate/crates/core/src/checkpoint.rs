//! Single-file checkpoints: a JSON header followed by raw little-endian f64
//! tensor data.
//!
//! Layout: the 8-byte magic `MDGCKPT\0`, the header length as a little-endian
//! u64, the UTF-8 JSON header, then every tensor's values back to back in
//! header order. The header carries the format version, an arbitrary JSON
//! `meta` object, and the name and shape of each tensor.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"MDGCKPT\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    version: u32,
    meta: Map<String, Value>,
    tensors: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: Map<String, Value>,
    tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn new(meta: Map<String, Value>) -> Self {
        Checkpoint {
            meta,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate tensor `{name}`")));
        }
        self.tensors.push((name, tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// The named tensor, which must exist and have the given shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<Tensor> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        if t.shape() != shape {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, expected {shape:?}",
                t.shape()
            )));
        }
        Ok(t.clone())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn meta_field<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .meta
            .get(key)
            .ok_or_else(|| Error::Checkpoint(format!("header has no `{key}` field")))?;
        serde_json::from_value(v.clone()).map_err(|e| Error::Checkpoint(format!("header field `{key}`: {e}")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            version: FORMAT_VERSION,
            meta: self.meta.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|(n, t)| Entry {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        let payload: usize = self.tensors.iter().map(|(_, t)| t.len() * 8).sum();
        let mut out = Vec::with_capacity(16 + json.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = &bytes[16..];
        if body.len() < len {
            return Err(Error::Checkpoint("truncated header".into()));
        }
        let raw: Value = serde_json::from_slice(&body[..len])?;
        let version = raw.get("version").and_then(Value::as_u64);
        if version != Some(FORMAT_VERSION as u64) {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version:?}; this build reads version {FORMAT_VERSION}"
            )));
        }
        let header: Header = serde_json::from_value(raw)?;
        let mut data = &body[len..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let n: usize = e.shape.iter().product();
            if data.len() < n * 8 {
                return Err(Error::Checkpoint(format!("payload truncated in tensor `{}`", e.name)));
            }
            let values = data[..n * 8]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            data = &data[n * 8..];
            tensors.push((e.name, Tensor::new(e.shape, values)?));
        }
        if !data.is_empty() {
            return Err(Error::Checkpoint(format!("{} trailing bytes after payload", data.len())));
        }
        Ok(Checkpoint {
            meta: header.meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> Checkpoint {
        let mut meta = Map::new();
        meta.insert("note".into(), json!("x"));
        let mut ck = Checkpoint::new(meta);
        ck.push("a", Tensor::matrix(2, 2, vec![1.0, -0.5, f64::MIN_POSITIVE, 3.25]).unwrap()).unwrap();
        ck.push("b", Tensor::vector(vec![0.1])).unwrap();
        ck
    }

    #[test]
    fn round_trip_is_exact() {
        let ck = sample();
        let bytes = ck.to_bytes().unwrap();
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);
        assert_eq!(Checkpoint::from_bytes(&bytes).unwrap().to_bytes().unwrap(), bytes);
    }

    #[test]
    fn payload_is_little_endian_f64() {
        let bytes = sample().to_bytes().unwrap();
        let tail = &bytes[bytes.len() - 8..];
        assert_eq!(f64::from_le_bytes(tail.try_into().unwrap()), 0.1);
    }

    #[test]
    fn version_mismatch_fails_loudly() {
        let bytes = sample().to_bytes().unwrap();
        let text = String::from_utf8_lossy(&bytes[16..]).replace("\"version\":1", "\"version\":9");
        let mut forged = bytes[..16].to_vec();
        forged.extend_from_slice(text.as_bytes());
        let err = Checkpoint::from_bytes(&forged).unwrap_err();
        assert!(err.to_string().contains("version"), "{err}");
    }

    #[test]
    fn corrupt_inputs_rejected() {
        let bytes = sample().to_bytes().unwrap();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Checkpoint::from_bytes(b"garbage!garbage!").is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
    }

    #[test]
    fn expect_checks_shape_and_presence() {
        let ck = sample();
        assert!(ck.expect("a", &[2, 2]).is_ok());
        assert!(ck.expect("a", &[4]).is_err());
        assert!(ck.expect("zz", &[1]).is_err());
        let mut ck = ck;
        assert!(ck.push("a", Tensor::scalar(1.0)).is_err());
    }
}
