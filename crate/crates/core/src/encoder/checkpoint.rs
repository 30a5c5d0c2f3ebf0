//! Binary checkpoint container.
//!
//! Layout (little-endian):
//!
//! ```text
//! b"CCAE"  u32 format_version  u32 header_len  header_len bytes of UTF-8 JSON
//! repeated until EOF:
//!   u32 name_len  name bytes  u8 dtype (0 = f32, 1 = f64)  u32 rank  rank × u64 dims  data
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{shape_table, Encoder, EncoderConfig, EncoderError, ParamStore, Provenance, Result};
use crate::corpus::{Dataset, Task};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CCAE";
pub const FORMAT_VERSION: u32 = 1;

const DTYPE_F32: u8 = 0;
const DTYPE_F64: u8 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Encoder,
    Classifier,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub kind: CheckpointKind,
    pub config: EncoderConfig,
    pub provenance: Option<Provenance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<Task>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<Dataset>,
    /// Vocabulary file contents, so a classifier checkpoint is self-contained.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vocab: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub blobs: Vec<(String, Tensor)>,
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(EncoderError::CorruptBlob(format!(
                "truncated while reading {what} at byte {}",
                self.pos
            )));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        let b = self.take(8, what)?;
        let mut a = [0u8; 8];
        a.copy_from_slice(b);
        Ok(u64::from_le_bytes(a))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

impl Checkpoint {
    pub fn from_encoder(encoder: &Encoder) -> Self {
        Self {
            header: CheckpointHeader {
                format_version: FORMAT_VERSION,
                kind: CheckpointKind::Encoder,
                config: encoder.config().clone(),
                provenance: encoder.provenance().cloned(),
                labels: None,
                task: None,
                dataset: None,
                vocab: None,
            },
            blobs: encoder
                .params()
                .iter()
                .map(|(n, t)| (n.to_string(), t.clone()))
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header).map_err(|e| EncoderError::CorruptBlob(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + header.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.header.format_version.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (name, t) in &self.blobs {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(DTYPE_F32);
            out.extend_from_slice(&2u32.to_le_bytes());
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for &v in t.data() {
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(EncoderError::CorruptBlob("bad magic bytes".into()));
        }
        let version = r.u32("format version")?;
        if version != FORMAT_VERSION {
            return Err(EncoderError::VersionMismatch {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let len = r.u32("header length")? as usize;
        let header: CheckpointHeader =
            serde_json::from_slice(r.take(len, "header")?).map_err(|e| EncoderError::CorruptBlob(e.to_string()))?;
        if header.format_version != FORMAT_VERSION {
            return Err(EncoderError::VersionMismatch {
                found: header.format_version,
                expected: FORMAT_VERSION,
            });
        }
        let mut blobs = Vec::new();
        while !r.done() {
            let name_len = r.u32("blob name length")? as usize;
            let name = String::from_utf8(r.take(name_len, "blob name")?.to_vec())
                .map_err(|_| EncoderError::CorruptBlob("blob name is not UTF-8".into()))?;
            let dtype = r.take(1, "dtype")?[0];
            let rank = r.u32("rank")?;
            let dims = (0..rank).map(|_| r.u64("dims")).collect::<Result<Vec<_>>>()?;
            let (rows, cols) = match dims.as_slice() {
                [n] => (1, *n as usize),
                [a, b] => (*a as usize, *b as usize),
                _ => return Err(EncoderError::CorruptBlob(format!("{name}: unsupported rank {rank}"))),
            };
            let count = rows
                .checked_mul(cols)
                .ok_or_else(|| EncoderError::CorruptBlob(format!("{name}: shape overflow")))?;
            let data: Vec<f64> = match dtype {
                DTYPE_F32 => r
                    .take(count.saturating_mul(4), &name)?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
                    .collect(),
                DTYPE_F64 => r
                    .take(count.saturating_mul(8), &name)?
                    .chunks_exact(8)
                    .map(|c| {
                        let mut a = [0u8; 8];
                        a.copy_from_slice(c);
                        f64::from_le_bytes(a)
                    })
                    .collect(),
                other => return Err(EncoderError::CorruptBlob(format!("{name}: unknown dtype {other}"))),
            };
            blobs.push((name, Tensor::from_vec(rows, cols, data)));
        }
        Ok(Self { header, blobs })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Removes and returns the blob `name`.
    pub fn take_blob(&mut self, name: &str) -> Option<Tensor> {
        let idx = self.blobs.iter().position(|(n, _)| n == name)?;
        Some(self.blobs.remove(idx).1)
    }

    /// Rebuilds the encoder; blobs must match the config's shape table
    /// exactly (no missing, no extra, same order-independent shapes).
    pub fn into_encoder(self) -> Result<Encoder> {
        let config = self.header.config.clone();
        config
            .validate()
            .map_err(|e| EncoderError::CorruptBlob(format!("header config: {e}")))?;
        let table = shape_table(&config);
        if self.blobs.len() != table.len() {
            return Err(EncoderError::CorruptBlob(format!(
                "expected {} parameter blobs, found {}",
                table.len(),
                self.blobs.len()
            )));
        }
        let mut blobs = self.blobs;
        let mut names = Vec::with_capacity(table.len());
        let mut tensors = Vec::with_capacity(table.len());
        for (name, shape) in table {
            let idx = blobs
                .iter()
                .position(|(n, _)| *n == name)
                .ok_or_else(|| EncoderError::CorruptBlob(format!("missing parameter {name}")))?;
            let (_, t) = blobs.swap_remove(idx);
            if t.shape() != shape {
                return Err(EncoderError::CorruptBlob(format!(
                    "{name}: shape {:?}, expected {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(EncoderError::CorruptBlob(format!("{name}: non-finite values")));
            }
            names.push(name);
            tensors.push(t);
        }
        Ok(Encoder::from_parts(
            config,
            ParamStore { names, tensors },
            self.header.provenance,
        ))
    }
}
