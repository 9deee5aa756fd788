//! Parameter archives: one line of JSON manifest, a newline, then the raw
//! little-endian `f32` payloads in manifest order.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tvf_core::{ParamSet, Tensor};

use crate::error::{CliError, CliResult};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Entry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: String,
    pub entries: Vec<Entry>,
    #[serde(default)]
    pub meta: BTreeMap<String, Value>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub kind: String,
    pub params: ParamSet<f32>,
    pub meta: BTreeMap<String, Value>,
}

impl Archive {
    pub fn new(kind: &str, params: ParamSet<f32>) -> Self {
        Archive { kind: kind.into(), params, meta: BTreeMap::new() }
    }

    pub fn with_meta(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut entries = Vec::with_capacity(self.params.len());
        let mut offset = 0u64;
        for (name, p) in self.params.iter() {
            entries.push(Entry {
                name: name.into(),
                dtype: "f32".into(),
                shape: p.tensor.shape().to_vec(),
                offset,
                trainable: p.trainable,
            });
            offset += 4 * p.tensor.numel() as u64;
        }
        let manifest =
            Manifest { format_version: FORMAT_VERSION, kind: self.kind.clone(), entries, meta: self.meta.clone() };
        let mut out = serde_json::to_vec(&manifest).expect("manifest serializes");
        out.push(b'\n');
        out.reserve(offset as usize);
        for (_, p) in self.params.iter() {
            for v in p.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> CliResult<Self> {
        let bad = |m: String| CliError::usage(format!("malformed archive: {m}"));
        let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| bad("no manifest line".into()))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[..nl]).map_err(|e| bad(e.to_string()))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(CliError::usage(format!(
                "archive format version {} is not supported (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let payload = &bytes[nl + 1..];
        let mut params = ParamSet::new();
        let mut expected = 0u64;
        for e in &manifest.entries {
            if e.dtype != "f32" {
                return Err(bad(format!("entry {} has dtype {}", e.name, e.dtype)));
            }
            if e.offset != expected {
                return Err(bad(format!("entry {} at offset {} (expected {expected})", e.name, e.offset)));
            }
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let end = start + 4 * n;
            let raw = payload.get(start..end).ok_or_else(|| bad(format!("entry {} runs past the end", e.name)))?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            params.insert(&e.name, Tensor::new(&e.shape, data)?, e.trainable)?;
            expected = end as u64;
        }
        if expected as usize != payload.len() {
            return Err(bad(format!("{} trailing bytes", payload.len() - expected as usize)));
        }
        Ok(Archive { kind: manifest.kind, params, meta: manifest.meta })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> CliResult<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| CliError::io(path, e))
    }

    /// Read an archive; a missing file is reported as a missing prerequisite
    /// described by `what`.
    pub fn read(path: impl AsRef<Path>, what: &str) -> CliResult<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(CliError::Missing(format!("{} ({what})", path.display())));
        }
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::decode(&bytes)
    }

    pub fn expect_kind(self, kind: &str) -> CliResult<Self> {
        if self.kind != kind {
            return Err(CliError::usage(format!("archive holds {}, expected {kind}", self.kind)));
        }
        Ok(self)
    }
}
