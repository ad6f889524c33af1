//! Self-describing binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes   "RADIALCK"
//! version u32
//! hlen    u64       length of the JSON header in bytes
//! header  hlen      UTF-8 JSON: config, step counters, trainer state, array table
//! arrays            for each entry of the array table, prod(shape) f64 values
//! ```
//!
//! Parameters and optimiser moments live in the array section so they
//! round-trip bit-exactly; the JSON header is written with round-trip float
//! formatting for the remaining (small) state.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"RADIALCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config: ExperimentConfig,
    /// Environment steps taken so far.
    pub step: u64,
    /// Trainer-specific state (RNG positions, environment snapshot, counters).
    pub state: serde_json::Value,
    pub arrays: Vec<ArrayMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ExperimentConfig,
    pub step: u64,
    pub state: serde_json::Value,
    pub arrays: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn array(&self, name: &str) -> Result<&Tensor> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::Checkpoint(format!("missing array `{name}`")))
    }

    /// All arrays whose names start with `prefix`, in stored order.
    pub fn arrays_with_prefix(&self, prefix: &str) -> Vec<&Tensor> {
        self.arrays
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t)
            .collect()
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        let header = CheckpointHeader {
            format_version: FORMAT_VERSION,
            config: self.config.clone(),
            step: self.step,
            state: self.state.clone(),
            arrays: self
                .arrays
                .iter()
                .map(|(n, t)| ArrayMeta {
                    name: n.clone(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header)?;
        out.write_all(MAGIC)?;
        out.write_all(&FORMAT_VERSION.to_le_bytes())?;
        out.write_all(&(json.len() as u64).to_le_bytes())?;
        out.write_all(&json)?;
        for (_, t) in &self.arrays {
            let mut buf = Vec::with_capacity(t.len() * 8);
            for v in t.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            out.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        input
            .read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("file too short".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let mut u32b = [0u8; 4];
        input.read_exact(&mut u32b)?;
        let version = u32::from_le_bytes(u32b);
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let mut u64b = [0u8; 8];
        input.read_exact(&mut u64b)?;
        let hlen = u64::from_le_bytes(u64b) as usize;
        let mut json = vec![0u8; hlen];
        input
            .read_exact(&mut json)
            .map_err(|_| Error::Checkpoint("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&json)?;
        let mut arrays = Vec::with_capacity(header.arrays.len());
        for meta in header.arrays {
            let n: usize = meta.shape.iter().product();
            let mut raw = vec![0u8; n * 8];
            input
                .read_exact(&mut raw)
                .map_err(|_| Error::Checkpoint(format!("truncated array `{}`", meta.name)))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            arrays.push((meta.name, Tensor::new(meta.shape, data)?));
        }
        let mut rest = Vec::new();
        input.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::Checkpoint("trailing bytes after arrays".into()));
        }
        header.config.validate()?;
        Ok(Self {
            config: header.config,
            step: header.step,
            state: header.state,
            arrays,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        Self::read_from(&mut bytes.as_slice())
    }
}
