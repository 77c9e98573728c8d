//! On-disk persistence of clouds and labels.
//!
//! Layout under the data directory, compatible with the training dataset
//! loader:
//!
//! ```text
//! <id>.ply          uploaded cloud
//! <id>.json         label, written atomically
//! index/<id>.json   cloud record
//! ```
//!
//! Every file is written to a temporary sibling and renamed into place, so
//! readers see either the old or the new content and never a prefix. Stale
//! temporaries left by a crash are removed when the store is opened.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::{Mutex, RwLock};

use arcal_core::ply::{load_ply, to_ply_string};
use arcal_core::{Label, PointCloud};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Corrupt {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error(transparent)]
    Core(#[from] arcal_core::Error),
    #[error("injected fault after {0} bytes")]
    InjectedFault(usize),
}

type Result<T> = std::result::Result<T, StoreError>;

fn io(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

const TEMP_PREFIX: &str = ".tmp-";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CloudRecord {
    pub cloud_id: String,
    /// File name relative to the data directory.
    pub ply_path: String,
    pub point_count: usize,
    pub uploaded_at: DateTime<Utc>,
    /// Set when a label exists.
    #[serde(default)]
    pub label_path: Option<String>,
}

pub struct Store {
    dir: PathBuf,
    records: RwLock<BTreeMap<String, CloudRecord>>,
    /// Serializes writes; a key never has two concurrent writers.
    write_lock: Mutex<()>,
    fault: Mutex<Option<usize>>,
}

impl Store {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        let index = dir.join("index");
        fs::create_dir_all(&index).map_err(io(&index))?;
        for d in [&dir, &index] {
            for e in fs::read_dir(d).map_err(io(d))?.flatten() {
                if e.file_name().to_string_lossy().starts_with(TEMP_PREFIX) {
                    let _ = fs::remove_file(e.path());
                }
            }
        }
        let mut records = BTreeMap::new();
        for e in fs::read_dir(&index).map_err(io(&index))?.flatten() {
            let p = e.path();
            if p.extension().map_or(true, |x| x != "json") {
                continue;
            }
            let text = fs::read_to_string(&p).map_err(io(&p))?;
            let r: CloudRecord = serde_json::from_str(&text).map_err(|source| StoreError::Corrupt { path: p.clone(), source })?;
            records.insert(r.cloud_id.clone(), r);
        }
        Ok(Self {
            dir,
            records: RwLock::new(records),
            write_lock: Mutex::new(()),
            fault: Mutex::new(None),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    /// Makes the next atomic write stop after `bytes` bytes of the
    /// temporary file, as a crash would, and leave the temporary behind.
    pub fn inject_write_fault(&self, bytes: usize) {
        *self.fault.lock().unwrap() = Some(bytes);
    }

    fn write_atomic(&self, path: &Path, data: &[u8]) -> Result<()> {
        let parent = path.parent().unwrap_or(&self.dir);
        let mut tmp = tempfile::Builder::new().prefix(TEMP_PREFIX).tempfile_in(parent).map_err(io(parent))?;
        if let Some(n) = self.fault.lock().unwrap().take() {
            let n = n.min(data.len());
            tmp.write_all(&data[..n]).map_err(io(path))?;
            tmp.flush().map_err(io(path))?;
            let _ = tmp.keep();
            return Err(StoreError::InjectedFault(n));
        }
        tmp.write_all(data).map_err(io(path))?;
        tmp.as_file().sync_all().map_err(io(path))?;
        tmp.persist(path).map_err(|e| StoreError::Io {
            path: path.to_path_buf(),
            source: e.error,
        })?;
        Ok(())
    }

    fn label_file(id: &str) -> String {
        format!("{id}.json")
    }

    fn label_path(&self, id: &str) -> PathBuf {
        self.dir.join(Self::label_file(id))
    }

    fn save_record(&self, r: &CloudRecord) -> Result<()> {
        let p = self.dir.join("index").join(format!("{}.json", r.cloud_id));
        self.write_atomic(&p, serde_json::to_string_pretty(r).expect("records serialize").as_bytes())
    }

    pub fn put_cloud(&self, cloud: &PointCloud) -> Result<CloudRecord> {
        let _w = self.write_lock.lock().unwrap();
        let id = uuid::Uuid::new_v4().to_string();
        let ply = format!("{id}.ply");
        self.write_atomic(&self.dir.join(&ply), to_ply_string(cloud).as_bytes())?;
        let r = CloudRecord {
            cloud_id: id.clone(),
            ply_path: ply,
            point_count: cloud.len(),
            uploaded_at: Utc::now(),
            label_path: None,
        };
        self.save_record(&r)?;
        self.records.write().unwrap().insert(id, r.clone());
        Ok(r)
    }

    pub fn list(&self) -> Vec<CloudRecord> {
        self.records.read().unwrap().values().cloned().collect()
    }

    pub fn record(&self, id: &str) -> Option<CloudRecord> {
        self.records.read().unwrap().get(id).cloned()
    }

    pub fn load_cloud(&self, id: &str) -> Result<Option<PointCloud>> {
        match self.record(id) {
            Some(r) => Ok(Some(load_ply(self.dir.join(r.ply_path))?)),
            None => Ok(None),
        }
    }

    /// Writes the label of an existing cloud; returns `false` when the cloud
    /// is unknown.
    pub fn put_label(&self, id: &str, label: &Label) -> Result<bool> {
        let _w = self.write_lock.lock().unwrap();
        let Some(mut r) = self.record(id) else { return Ok(false) };
        let text = serde_json::to_string_pretty(label).expect("labels serialize");
        self.write_atomic(&self.label_path(id), text.as_bytes())?;
        if r.label_path.is_none() {
            r.label_path = Some(Self::label_file(id));
            self.save_record(&r)?;
            self.records.write().unwrap().insert(id.to_string(), r);
        }
        Ok(true)
    }

    /// The stored label JSON text.
    pub fn label_json(&self, id: &str) -> Result<Option<String>> {
        if self.record(id).is_none() {
            return Ok(None);
        }
        let p = self.label_path(id);
        match fs::read_to_string(&p) {
            Ok(t) => Ok(Some(t)),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(io(&p)(e)),
        }
    }

    /// Removes a label; `false` when there was none.
    pub fn delete_label(&self, id: &str) -> Result<bool> {
        let _w = self.write_lock.lock().unwrap();
        let Some(mut r) = self.record(id) else { return Ok(false) };
        let p = self.label_path(id);
        let existed = match fs::remove_file(&p) {
            Ok(()) => true,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => false,
            Err(e) => return Err(io(&p)(e)),
        };
        if r.label_path.take().is_some() {
            self.save_record(&r)?;
            self.records.write().unwrap().insert(id.to_string(), r);
        }
        Ok(existed)
    }
}
