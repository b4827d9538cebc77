//! Flat parameter storage with a named layout, and the checkpoint format:
//! a JSON header naming every tensor's shape and byte offset next to a blob
//! of little-endian f32 values.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::real::Real;
use crate::error::{Error, Result};
use crate::manifest::write_atomic;
use crate::rng::sha256_hex;

pub const INIT_STD: f64 = 0.02;
pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with the given std, redrawn outside ±2 std.
    TruncNormal(f64),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub init: Init,
}

impl ParamSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
    len: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a tensor and returns its offset.
    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> usize {
        let offset = self.len;
        let spec = ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
            init,
        };
        self.len += spec.len();
        self.specs.push(spec);
        offset
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn init<T: Real, R: Rng>(&self, rng: &mut R) -> Vec<T> {
        let mut out = vec![T::zero(); self.len];
        for spec in &self.specs {
            let slot = &mut out[spec.range()];
            match spec.init {
                Init::Zeros => {}
                Init::Ones => slot.fill(T::one()),
                Init::TruncNormal(std) => {
                    for v in slot {
                        let z = loop {
                            let z: f64 = StandardNormal.sample(rng);
                            if z.abs() <= 2.0 {
                                break z;
                            }
                        };
                        *v = T::from_f64_lossy(z * std);
                    }
                }
            }
        }
        out
    }

    pub fn export<T: Real>(&self, prefix: &str, values: &[T]) -> Vec<NamedTensor> {
        self.specs
            .iter()
            .map(|s| NamedTensor {
                name: format!("{prefix}{}", s.name),
                shape: s.shape.clone(),
                data: values[s.range()].iter().map(|v| v.to_f64_lossy() as f32).collect(),
            })
            .collect()
    }

    pub fn import<T: Real>(&self, prefix: &str, ckpt: &Checkpoint) -> Result<Vec<T>> {
        let mut out = vec![T::zero(); self.len];
        for s in &self.specs {
            let name = format!("{prefix}{}", s.name);
            let t = ckpt.get(&name)?;
            if t.shape != s.shape {
                return Err(Error::Shape(format!(
                    "tensor `{name}` has shape {:?}, expected {:?}",
                    t.shape, s.shape
                )));
            }
            for (o, &v) in out[s.range()].iter_mut().zip(&t.data) {
                *o = T::from_f64_lossy(v as f64);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub byte_offset: usize,
    pub byte_len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub schema_version: u32,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

/// Named f32 tensors plus free-form metadata.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub meta: serde_json::Value,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Result<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name).ok_or_else(|| Error::Format {
            what: "checkpoint",
            detail: format!("missing tensor `{name}`"),
        })
    }

    pub fn header_path(stem: &Path) -> PathBuf {
        stem.with_extension("json")
    }

    pub fn blob_path(stem: &Path) -> PathBuf {
        stem.with_extension("bin")
    }

    pub fn encode(&self) -> Result<(Vec<u8>, Vec<u8>)> {
        let mut blob = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for t in &self.tensors {
            if t.shape.iter().product::<usize>() != t.data.len() {
                return Err(Error::Shape(format!("tensor `{}` data does not match shape", t.name)));
            }
            entries.push(TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                byte_offset: blob.len(),
                byte_len: t.data.len() * 4,
            });
            for v in &t.data {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = CheckpointHeader {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            dtype: "f32le".into(),
            tensors: entries,
            meta: self.meta.clone(),
        };
        Ok((serde_json::to_vec_pretty(&header)?, blob))
    }

    pub fn decode(header: &[u8], blob: &[u8]) -> Result<Self> {
        let header: CheckpointHeader = serde_json::from_slice(header)?;
        if header.schema_version != CHECKPOINT_SCHEMA_VERSION || header.dtype != "f32le" {
            return Err(Error::Format {
                what: "checkpoint",
                detail: format!("unsupported version {} / dtype {}", header.schema_version, header.dtype),
            });
        }
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in header.tensors {
            let bytes = blob.get(e.byte_offset..e.byte_offset + e.byte_len).ok_or_else(|| Error::Format {
                what: "checkpoint",
                detail: format!("tensor `{}` exceeds blob", e.name),
            })?;
            if e.shape.iter().product::<usize>() * 4 != e.byte_len {
                return Err(Error::Format {
                    what: "checkpoint",
                    detail: format!("tensor `{}` byte length does not match shape", e.name),
                });
            }
            tensors.push(NamedTensor {
                name: e.name,
                shape: e.shape,
                data: bytes
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            });
        }
        Ok(Self {
            meta: header.meta,
            tensors,
        })
    }

    /// Writes `<stem>.json` and `<stem>.bin`.
    pub fn write(&self, stem: &Path) -> Result<()> {
        let (header, blob) = self.encode()?;
        write_atomic(&Self::blob_path(stem), &blob)?;
        write_atomic(&Self::header_path(stem), &header)
    }

    pub fn read(stem: &Path) -> Result<Self> {
        let hp = Self::header_path(stem);
        let bp = Self::blob_path(stem);
        let header = fs::read(&hp).map_err(|e| Error::io(&hp, e))?;
        let blob = fs::read(&bp).map_err(|e| Error::io(&bp, e))?;
        Self::decode(&header, &blob)
    }

    pub fn exists(stem: &Path) -> bool {
        Self::header_path(stem).is_file() && Self::blob_path(stem).is_file()
    }
}

/// SHA-256 over the little-endian bytes of a parameter vector.
pub fn checksum<T: Real>(values: &[T]) -> String {
    let bytes: Vec<u8> = values
        .iter()
        .flat_map(|v| v.to_f64_lossy().to_le_bytes())
        .collect();
    sha256_hex(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;

    #[test]
    fn init_rules() {
        let mut l = ParamLayout::new();
        l.add("w", &[50, 40], Init::TruncNormal(INIT_STD));
        l.add("b", &[40], Init::Zeros);
        l.add("g", &[40], Init::Ones);
        let a: Vec<f32> = l.init(&mut rng_for(1, &["i"]));
        let b: Vec<f32> = l.init(&mut rng_for(1, &["i"]));
        assert_eq!(a, b);
        assert_eq!(a.len(), 2080);
        assert!(a[..2000].iter().all(|v| v.abs() <= 2.0 * INIT_STD as f32));
        assert!(a[2000..2040].iter().all(|&v| v == 0.0));
        assert!(a[2040..].iter().all(|&v| v == 1.0));
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let ck = Checkpoint {
            meta: serde_json::json!({"k": 1}),
            tensors: vec![
                NamedTensor { name: "a".into(), shape: vec![2, 2], data: vec![1.0, -2.0, 3.5, 0.0] },
                NamedTensor { name: "b".into(), shape: vec![1], data: vec![7.0] },
            ],
        };
        let (h, b) = ck.encode().unwrap();
        assert_eq!(b.len(), 20);
        assert_eq!(Checkpoint::decode(&h, &b).unwrap(), ck);
        assert!(Checkpoint::decode(&h, &b[..10]).is_err());
    }
}
