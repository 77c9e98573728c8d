//! Self-describing binary archive: an 8-byte magic, a little-endian `u64`
//! header length, a JSON header, then every tensor as raw little-endian
//! `f64` in header order.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::NetworkConfig;
use crate::error::{Error, Result};
use crate::tape::Mat;

const MAGIC: &[u8; 8] = b"ARCALCK1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    epoch: usize,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

/// Everything a checkpoint file holds.
#[derive(Debug, Clone, PartialEq)]
pub struct Archive {
    pub config: NetworkConfig,
    pub epoch: usize,
    pub tensors: Vec<(String, Mat)>,
    /// Free-form state owned by the writer (training history, optimizer step...).
    pub meta: serde_json::Value,
}

impl Archive {
    pub fn tensor(&self, name: &str) -> Option<&Mat> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, m)| m)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            config: self.config.clone(),
            epoch: self.epoch,
            tensors: self
                .tensors
                .iter()
                .map(|(n, m)| TensorEntry {
                    name: n.clone(),
                    shape: [m.nrows(), m.ncols()],
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let body: usize = self.tensors.iter().map(|(_, m)| m.len() * 8).sum();
        let mut out = Vec::with_capacity(16 + json.len() + body);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, m) in &self.tensors {
            for v in m.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(data: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if data.len() < 16 || &data[..8] != MAGIC {
            return Err(bad("not a checkpoint archive (bad magic)"));
        }
        let hlen = u64::from_le_bytes(data[8..16].try_into().unwrap()) as usize;
        let body_start = 16usize.checked_add(hlen).filter(|&e| e <= data.len()).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&data[16..body_start]).map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let mut pos = body_start;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for t in header.tensors {
            let n = t.shape[0] * t.shape[1];
            let end = pos + n * 8;
            if end > data.len() {
                return Err(Error::Checkpoint(format!("truncated tensor {}", t.name)));
            }
            let vals: Vec<f64> = data[pos..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            pos = end;
            let m = Mat::from_shape_vec((t.shape[0], t.shape[1]), vals).map_err(|e| Error::Checkpoint(e.to_string()))?;
            tensors.push((t.name, m));
        }
        if pos != data.len() {
            return Err(bad("trailing bytes after the last tensor"));
        }
        header.config.validate()?;
        Ok(Self {
            config: header.config,
            epoch: header.epoch,
            tensors,
            meta: header.meta,
        })
    }

    /// Writes via a temporary sibling and a rename, so readers never see a
    /// partial file.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        };
        let bytes = self.to_bytes()?;
        let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        std::fs::create_dir_all(dir).map_err(io)?;
        let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
        tmp.write_all(&bytes).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(path).map_err(|e| io(e.error))?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let data = std::fs::read(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::from_bytes(&data)
    }
}
