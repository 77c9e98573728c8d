//! Labeled corpora on disk and train/test splits.
//!
//! A dataset directory holds `<id>.ply` clouds next to `<id>.json` labels.
//! A label file containing `null` marks a scene without the robot; clouds
//! with no label file at all are not yet annotated and are skipped.

use std::fs;
use std::path::Path;

use arcal_core::ply::{load_ply, save_ply};
use arcal_core::{Label, LabeledCloud};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{io, Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train_ids: Vec<String>,
    pub test_ids: Vec<String>,
}

/// Seeded shuffle, then the first `train_count` ids train.
pub fn split_dataset(corpus: &[String], train_count: usize, seed: u64) -> Result<DatasetSplit> {
    if train_count == 0 || train_count >= corpus.len() {
        return Err(Error::Validation(format!(
            "train count must lie strictly between 0 and the corpus size {}, got {train_count}",
            corpus.len()
        )));
    }
    let mut ids = corpus.to_vec();
    ids.sort();
    ids.dedup();
    if ids.len() != corpus.len() {
        return Err(Error::Validation("corpus ids are not unique".into()));
    }
    ids.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_ids = ids.split_off(train_count);
    Ok(DatasetSplit { train_ids: ids, test_ids })
}

/// Default split fraction used by the CLI when none is given: 537 of 597.
pub fn default_train_count(n: usize) -> usize {
    ((n * 537) as f64 / 597.0).round().clamp(1.0, n.saturating_sub(1).max(1) as f64) as usize
}

fn read_label(path: &Path) -> Result<Option<Label>> {
    let text = fs::read_to_string(path).map_err(io(path))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.into(),
        source,
    })
}

/// Loads every labeled cloud in `dir`, sorted by id.
pub fn load_dir(dir: impl AsRef<Path>) -> Result<Vec<LabeledCloud>> {
    let dir = dir.as_ref();
    let mut ids: Vec<String> = fs::read_dir(dir)
        .map_err(io(dir))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "ply"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    ids.sort();
    let mut out = Vec::new();
    for id in ids {
        let lp = dir.join(format!("{id}.json"));
        if !lp.exists() {
            continue;
        }
        let label = match read_label(&lp)? {
            Some(l) => Some(l.to_box().map_err(|errs| {
                let msg: Vec<String> = errs.iter().map(|e| e.to_string()).collect();
                Error::Validation(format!("{}: {}", lp.display(), msg.join("; ")))
            })?),
            None => None,
        };
        let cloud = load_ply(dir.join(format!("{id}.ply")))?;
        out.push(LabeledCloud::new(id, cloud, label)?);
    }
    Ok(out)
}

pub fn save_dir(dir: impl AsRef<Path>, data: &[LabeledCloud]) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(io(dir))?;
    for lc in data {
        save_ply(&lc.cloud, dir.join(format!("{}.ply", lc.cloud_id)))?;
        let label = lc.label.as_ref().map(|b| Label::from_box(&lc.cloud_id, b));
        let lp = dir.join(format!("{}.json", lc.cloud_id));
        let text = serde_json::to_string_pretty(&label).expect("labels serialize");
        fs::write(&lp, text).map_err(io(&lp))?;
    }
    Ok(())
}

/// Clouds of `data` whose ids are in `ids`, in `ids` order.
pub fn select<'a>(data: &'a [LabeledCloud], ids: &[String]) -> Result<Vec<&'a LabeledCloud>> {
    ids.iter()
        .map(|id| {
            data.iter()
                .find(|lc| &lc.cloud_id == id)
                .ok_or_else(|| Error::Validation(format!("unknown cloud id {id}")))
        })
        .collect()
}
