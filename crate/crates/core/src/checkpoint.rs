//! Snapshots and the CNDF single-file container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "CNDF" | u32 version = 1 | u64 header_len | header JSON (header_len bytes) | payload
//! ```
//!
//! The header is `{"epoch":..,"arch_hash":..,"tensors":[{"name","dtype","shape","offset","nbytes"}]}`.
//! Offsets are relative to the payload start; tensors are stored in header
//! order, contiguous, as raw `f32` LE with no padding.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::arch::ModelArchitecture;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"CNDF";
pub const VERSION: u32 = 1;

/// All learned parameters of one model at one training epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: u64,
    pub arch_hash: String,
    pub tensors: IndexMap<String, Tensor>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    epoch: u64,
    arch_hash: String,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
    nbytes: u64,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Validation(format!("checkpoint has no tensor `{name}`")))
    }

    /// Weight tensor of a layer, `NoParams` if it has none.
    pub fn weight(&self, layer: &str) -> Result<&Tensor> {
        self.tensors
            .get(&format!("{layer}.weight"))
            .ok_or_else(|| Error::NoParams(layer.to_string()))
    }

    pub fn bias(&self, layer: &str) -> Result<&Tensor> {
        self.tensors
            .get(&format!("{layer}.bias"))
            .ok_or_else(|| Error::NoParams(layer.to_string()))
    }

    /// Names of layers that own a weight tensor, in storage order.
    pub fn param_layers(&self) -> Vec<&str> {
        self.tensors
            .keys()
            .filter_map(|k| k.strip_suffix(".weight"))
            .collect()
    }

    /// Checks the tensor set and shapes against `arch` exactly.
    pub fn validate_against(&self, arch: &ModelArchitecture) -> Result<()> {
        let expected_hash = arch.hash();
        if self.arch_hash != expected_hash {
            return Err(Error::Validation(format!(
                "arch_hash {} does not match architecture {expected_hash}",
                self.arch_hash
            )));
        }
        let specs = arch.param_specs()?;
        for name in self.tensors.keys() {
            if !specs.iter().any(|s| &s.name == name) {
                return Err(Error::Validation(format!(
                    "tensor `{name}` is not a parameter of the architecture"
                )));
            }
        }
        for spec in &specs {
            let t = self.tensors.get(&spec.name).ok_or_else(|| {
                Error::Validation(format!("missing parameter tensor `{}`", spec.name))
            })?;
            if t.shape() != spec.shape.as_slice() {
                return Err(Error::Validation(format!(
                    "tensor `{}` has shape {:?}, architecture expects {:?}",
                    spec.name,
                    t.shape(),
                    spec.shape
                )));
            }
        }
        Ok(())
    }

    pub fn ensure_comparable(&self, other: &Checkpoint) -> Result<()> {
        if self.arch_hash != other.arch_hash {
            return Err(Error::Incomparable(format!(
                "arch_hash {} vs {}",
                self.arch_hash, other.arch_hash
            )));
        }
        Ok(())
    }

    /// Serializes to CNDF bytes without checking against an architecture.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let entries = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let nbytes = 4 * t.len() as u64;
                let e = TensorEntry {
                    name: name.clone(),
                    dtype: "f32".into(),
                    shape: t.shape().to_vec(),
                    offset,
                    nbytes,
                };
                offset += nbytes;
                e
            })
            .collect();
        let header = serde_json::to_vec(&Header {
            epoch: self.epoch,
            arch_hash: self.arch_hash.clone(),
            tensors: entries,
        })
        .expect("header serializes");

        let mut out = Vec::with_capacity(16 + header.len() + offset as usize);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses CNDF bytes. The whole buffer must be consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = bytes;
        let magic = take(&mut cur, 4, "magic")?;
        if magic != MAGIC {
            return Err(Error::Format(format!("bad magic {magic:02x?}")));
        }
        let version = u32::from_le_bytes(take(&mut cur, 4, "version")?.try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let header_len =
            u64::from_le_bytes(take(&mut cur, 8, "header length")?.try_into().unwrap());
        let header_len = usize::try_from(header_len)
            .map_err(|_| Error::Format(format!("header length {header_len} too large")))?;
        let header_bytes = take(&mut cur, header_len, "header")?;
        let header: Header = serde_json::from_slice(header_bytes)
            .map_err(|e| Error::Format(format!("header JSON: {e}")))?;

        let mut expected_offset = 0u64;
        for e in &header.tensors {
            if e.dtype != "f32" {
                return Err(Error::Format(format!(
                    "tensor `{}` has unsupported dtype {}",
                    e.name, e.dtype
                )));
            }
            let numel = e
                .shape
                .iter()
                .try_fold(1u64, |acc, &d| acc.checked_mul(d as u64));
            if numel.and_then(|n| n.checked_mul(4)) != Some(e.nbytes) {
                return Err(Error::Format(format!(
                    "tensor `{}`: nbytes {} does not match shape {:?}",
                    e.name, e.nbytes, e.shape
                )));
            }
            if e.offset != expected_offset {
                return Err(Error::Format(format!(
                    "tensor `{}`: offset {} is not contiguous (expected {expected_offset})",
                    e.name, e.offset
                )));
            }
            expected_offset += e.nbytes;
        }
        if (cur.len() as u64) < expected_offset {
            return Err(Error::Truncation(format!(
                "header declares {expected_offset} payload bytes, file has {}",
                cur.len()
            )));
        }
        if (cur.len() as u64) > expected_offset {
            return Err(Error::Format(format!(
                "{} trailing bytes after payload",
                cur.len() as u64 - expected_offset
            )));
        }

        let mut tensors = IndexMap::with_capacity(header.tensors.len());
        for e in header.tensors {
            let raw = &cur[e.offset as usize..(e.offset + e.nbytes) as usize];
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(e.shape, data)?;
            if tensors.insert(e.name.clone(), t).is_some() {
                return Err(Error::Validation(format!("duplicate tensor `{}`", e.name)));
            }
        }
        Ok(Self {
            epoch: header.epoch,
            arch_hash: header.arch_hash,
            tensors,
        })
    }
}

fn take<'a>(cur: &mut &'a [u8], n: usize, what: &str) -> Result<&'a [u8]> {
    if cur.len() < n {
        return Err(Error::Truncation(format!(
            "{what}: need {n} bytes, have {}",
            cur.len()
        )));
    }
    let (head, tail) = cur.split_at(n);
    *cur = tail;
    Ok(head)
}

/// Validates `ckpt` against `arch` and writes it. Returns the byte count.
pub fn write_checkpoint<W: Write>(
    ckpt: &Checkpoint,
    arch: &ModelArchitecture,
    mut dest: W,
) -> Result<u64> {
    ckpt.validate_against(arch)?;
    let bytes = ckpt.to_bytes();
    dest.write_all(&bytes)?;
    Ok(bytes.len() as u64)
}

pub fn read_checkpoint<R: Read>(mut source: R) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    source.read_to_end(&mut bytes)?;
    Checkpoint::from_bytes(&bytes)
}

pub fn save_checkpoint(
    ckpt: &Checkpoint,
    arch: &ModelArchitecture,
    path: impl AsRef<Path>,
) -> Result<u64> {
    let file = fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    let n = write_checkpoint(ckpt, arch, &mut w)?;
    w.flush()?;
    Ok(n)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
