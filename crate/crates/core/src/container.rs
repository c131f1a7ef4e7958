//! Single-file tensor container.
//!
//! Layout: an 8-byte little-endian header length, a UTF-8 JSON header, then
//! raw little-endian `float32` tensor data. The header carries free-form
//! metadata and an ordered tensor manifest whose byte offsets are relative
//! to the start of the data section.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const FORMAT_TAG: &str = "steerprobe-tensors/1";

#[derive(Debug, Clone, PartialEq)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl TensorEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            name: name.into(),
            shape,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TensorContainer {
    pub metadata: serde_json::Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    metadata: serde_json::Value,
    tensors: Vec<ManifestEntry>,
}

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
}

impl TensorContainer {
    pub fn new(metadata: serde_json::Value) -> Self {
        Self {
            metadata,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, entry: TensorEntry) {
        self.tensors.push(entry);
    }

    pub fn get(&self, name: &str) -> Option<&TensorEntry> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Looks up `name` and checks its shape.
    pub fn expect(&self, name: &str, shape: &[usize]) -> Result<&TensorEntry> {
        let entry = self
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))?;
        if entry.shape != shape {
            return Err(Error::ShapeMismatch {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: entry.shape.clone(),
            });
        }
        Ok(entry)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut manifest = Vec::with_capacity(self.tensors.len());
        let mut offset = 0usize;
        for t in &self.tensors {
            let count: usize = t.shape.iter().product();
            if count != t.data.len() {
                return Err(Error::ShapeMismatch {
                    name: t.name.clone(),
                    expected: t.shape.clone(),
                    found: vec![t.data.len()],
                });
            }
            manifest.push(ManifestEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                dtype: "float32".to_string(),
                offset,
            });
            offset += count * 4;
        }
        let header = Header {
            format: FORMAT_TAG.to_string(),
            metadata: self.metadata.clone(),
            tensors: manifest,
        };
        let header_bytes = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(8 + header_bytes.len() + offset);
        out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&header_bytes);
        for t in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::MalformedHeader(
                "file shorter than the 8-byte length prefix".into(),
            ));
        }
        let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        let data_start = 8usize
            .checked_add(header_len)
            .filter(|end| *end <= bytes.len())
            .ok_or_else(|| {
                Error::MalformedHeader(format!(
                    "declared header length {header_len} exceeds file size {}",
                    bytes.len()
                ))
            })?;
        let header_text = std::str::from_utf8(&bytes[8..data_start])
            .map_err(|e| Error::MalformedHeader(format!("header is not UTF-8: {e}")))?;
        let header: Header = serde_json::from_str(header_text)
            .map_err(|e| Error::MalformedHeader(format!("header JSON: {e}")))?;
        if header.format != FORMAT_TAG {
            return Err(Error::MalformedHeader(format!(
                "unknown format tag `{}`",
                header.format
            )));
        }
        let data = &bytes[data_start..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for m in header.tensors {
            if m.dtype != "float32" {
                return Err(Error::MalformedHeader(format!(
                    "tensor `{}` has unsupported dtype `{}`",
                    m.name, m.dtype
                )));
            }
            let count: usize = m.shape.iter().product();
            let end = m.offset + count * 4;
            if end > data.len() {
                return Err(Error::Truncated {
                    name: m.name,
                    needed: end,
                    available: data.len(),
                });
            }
            let values = data[m.offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            tensors.push(TensorEntry {
                name: m.name,
                shape: m.shape,
                data: values,
            });
        }
        Ok(Self {
            metadata: header.metadata,
            tensors,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
