// SPDX-License-Identifier: Apache-2.0

//! Binary model container.
//!
//! Little-endian throughout:
//!
//! ```text
//! "MOMB"            4 bytes
//! version           u32 (= 1)
//! header length     u32
//! header            JSON: task, architecture, train config, vocabulary,
//!                   vocabulary hash, tensor count
//! per tensor:       u16 name length, name, u8 dtype (0 = f32), u8 rank,
//!                   rank x u64 dims, f32 payload (row-major)
//! checksum          u64 FNV-1a of every preceding byte
//! ```

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use super::{Architecture, ModelBundle, TaskConfig, TrainConfig};
use crate::fnv::fnv1a64;
use crate::textproc::Vocabulary;

pub const MAGIC: &[u8; 4] = b"MOMB";
pub const FORMAT_VERSION: u32 = 1;
const DTYPE_F32: u8 = 0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic {found:02x?} at offset 0")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported format version {version} at offset 4")]
    UnsupportedVersion { version: u32 },
    #[error("truncated: needed {needed} bytes at offset {offset}")]
    Truncated { offset: usize, needed: usize },
    #[error("checksum mismatch at offset {offset}: stored {stored:016x}, computed {computed:016x}")]
    ChecksumMismatch { offset: usize, stored: u64, computed: u64 },
    #[error("bad header at offset {offset}: {message}")]
    BadHeader { offset: usize, message: String },
    #[error("bad tensor at offset {offset}: {message}")]
    BadTensor { offset: usize, message: String },
    #[error("{count} unexpected trailing bytes at offset {offset}")]
    TrailingBytes { offset: usize, count: usize },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    task: TaskConfig,
    architecture: Architecture,
    train: Option<TrainConfig>,
    vocabulary: Value,
    vocabulary_hash: String,
    tensor_count: usize,
}

pub(crate) fn checksum_of(file: &[u8]) -> u64 {
    u64::from_le_bytes(file[file.len() - 8..].try_into().unwrap())
}

impl ModelBundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            task: self.task.clone(),
            architecture: self.arch.clone(),
            train: self.train_config.clone(),
            vocabulary: serde_json::from_str(&self.vocab.to_json()).expect("vocabulary json"),
            vocabulary_hash: format!("{:016x}", self.vocab.fingerprint()),
            tensor_count: self.params.specs().len(),
        };
        let json = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(16 + json.len() + self.params.len() * 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let data = self.params.data();
        for spec in self.params.specs() {
            out.extend_from_slice(&(spec.name.len() as u16).to_le_bytes());
            out.extend_from_slice(spec.name.as_bytes());
            out.push(DTYPE_F32);
            out.push(spec.dims.len() as u8);
            for &d in &spec.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &w in &data[spec.offset..spec.offset + spec.len()] {
                out.extend_from_slice(&(w as f32).to_le_bytes());
            }
        }
        let sum = fnv1a64(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FormatError> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(FormatError::BadMagic { found: magic.to_vec() });
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(FormatError::UnsupportedVersion { version });
        }
        let json_len = r.u32()? as usize;
        let header_at = r.pos;
        let header: Header = serde_json::from_slice(r.take(json_len)?).map_err(|e| FormatError::BadHeader {
            offset: header_at,
            message: e.to_string(),
        })?;
        let bad_header = |message: String| FormatError::BadHeader {
            offset: header_at,
            message,
        };
        let vocab = Vocabulary::from_json(&header.vocabulary.to_string()).map_err(|e| bad_header(e.to_string()))?;
        if header.vocabulary_hash != format!("{:016x}", vocab.fingerprint()) {
            return Err(bad_header("vocabulary hash does not match vocabulary".into()));
        }
        let mut bundle = ModelBundle::empty(header.task, header.architecture, vocab, header.train)
            .map_err(|e| bad_header(e.to_string()))?;
        let expected = bundle.params.specs().to_vec();
        if header.tensor_count != expected.len() {
            return Err(bad_header(format!(
                "{} tensors declared, architecture has {}",
                header.tensor_count,
                expected.len()
            )));
        }

        let mut values = Vec::with_capacity(bundle.params.len());
        for spec in &expected {
            let at = r.pos;
            let bad = |message: String| FormatError::BadTensor { offset: at, message };
            let name_len = r.u16()? as usize;
            let name = r.take(name_len)?;
            if name != spec.name.as_bytes() {
                return Err(bad(format!(
                    "expected tensor {:?}, found {:?}",
                    spec.name,
                    String::from_utf8_lossy(name)
                )));
            }
            let dtype = r.u8()?;
            if dtype != DTYPE_F32 {
                return Err(bad(format!("unsupported dtype {dtype}")));
            }
            let rank = r.u8()? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                dims.push(r.u64()? as usize);
            }
            if dims != spec.dims {
                return Err(bad(format!("{}: shape {dims:?}, expected {:?}", spec.name, spec.dims)));
            }
            let payload = r.take(spec.len() * 4)?;
            for chunk in payload.chunks_exact(4) {
                let w = f32::from_le_bytes(chunk.try_into().unwrap());
                if !w.is_finite() {
                    return Err(bad(format!("{}: non-finite weight", spec.name)));
                }
                values.push(f64::from(w));
            }
        }
        let body_end = r.pos;
        let stored = r.u64()?;
        if r.pos != bytes.len() {
            return Err(FormatError::TrailingBytes {
                offset: r.pos,
                count: bytes.len() - r.pos,
            });
        }
        let computed = fnv1a64(&bytes[..body_end]);
        if stored != computed {
            return Err(FormatError::ChecksumMismatch {
                offset: body_end,
                stored,
                computed,
            });
        }
        bundle.params.data_mut().copy_from_slice(&values);
        Ok(bundle)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        if self.bytes.len() - self.pos < n {
            return Err(FormatError::Truncated {
                offset: self.pos,
                needed: n,
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FormatError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FormatError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
