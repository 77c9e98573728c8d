//! Implementations of the `arcal` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use arcal_core::ply::load_ply;
use arcal_core::Label;
use arcal_detector::{Detector, NetworkConfig};
use arcal_train::{
    default_train_count, evaluate, load_dir, save_dir, split_dataset, synth_corpus, DatasetSplit, Metrics, RunOptions, SceneSpec,
    TrainConfig, TrainState,
};
use serde::Serialize;
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Preset {
    Paper,
    Reduced,
    Tiny,
}

impl Preset {
    pub fn network(self) -> NetworkConfig {
        match self {
            Preset::Paper => NetworkConfig::paper(),
            Preset::Reduced => NetworkConfig::reduced(),
            Preset::Tiny => NetworkConfig::tiny(),
        }
    }
}

/// Writes `count` synthetic scenes into `out`, a fraction of them without
/// the robot.
pub fn synth(out: &Path, count: usize, seed: u64, spec: &SceneSpec, empty_every: Option<usize>) -> Result<Value> {
    let mut data = synth_corpus(spec, count, seed)?;
    if let Some(k) = empty_every.filter(|&k| k > 0) {
        let empty = SceneSpec {
            has_object: false,
            ..spec.clone()
        };
        for (i, lc) in data.iter_mut().enumerate().filter(|(i, _)| (i + 1) % k == 0) {
            *lc = arcal_train::synth_scene(&empty, seed + i as u64)?.labeled;
        }
    }
    save_dir(out, &data)?;
    let with_object = data.iter().filter(|c| c.has_object()).count();
    Ok(json!({ "out": out, "clouds": data.len(), "with_object": with_object }))
}

pub struct TrainArgs {
    pub data: PathBuf,
    pub out: PathBuf,
    pub run_dir: Option<PathBuf>,
    /// Training checkpoint to continue; its stored recipe replaces `config`.
    pub resume: Option<PathBuf>,
    pub preset: Preset,
    /// Training clouds; the rest is the test split.
    pub train_count: Option<usize>,
    pub config: TrainConfig,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    checkpoint: &'a Path,
    epochs: usize,
    initial_loss: f64,
    final_loss: f64,
    train: Metrics,
    test: Option<Metrics>,
}

pub fn train(args: &TrainArgs) -> Result<Value> {
    let data = load_dir(&args.data).with_context(|| format!("loading {}", args.data.display()))?;
    if data.is_empty() {
        bail!("no annotated clouds in {}", args.data.display());
    }
    // A resumed run keeps the recipe, and so the split, it was started with.
    let (resumed, config) = match &args.resume {
        Some(p) => {
            let (state, cfg) = TrainState::load(p).with_context(|| format!("loading {}", p.display()))?;
            (Some(state), cfg)
        }
        None => (None, args.config.clone()),
    };
    let ids: Vec<String> = data.iter().map(|c| c.cloud_id.clone()).collect();
    let n_train = args.train_count.unwrap_or_else(|| default_train_count(ids.len()));
    let split = split_dataset(&ids, n_train, config.seed)?;
    let run_dir = args.run_dir.clone().unwrap_or_else(|| default_run_dir(&args.out));
    fs::create_dir_all(&run_dir).with_context(|| format!("creating {}", run_dir.display()))?;
    fs::write(run_dir.join("split.json"), serde_json::to_string_pretty(&split)?)?;
    let opts = RunOptions { run_dir: Some(run_dir.clone()) };

    let run = match resumed {
        Some(state) => arcal_train::resume(&data, &split, state, &config, &opts)?,
        None => arcal_train::train(&data, &split, args.preset.network(), &config, &opts)?,
    };
    run.state.save(&config, &args.out)?;

    let h = run.history();
    let metrics_of = |ids: &[String]| -> Result<Option<Metrics>> {
        let set: Vec<_> = arcal_train::dataset::select(&data, ids)?;
        if set.iter().any(|c| c.has_object()) {
            Ok(Some(evaluate(&run.state.detector, &set)?))
        } else {
            Ok(None)
        }
    };
    let train_metrics = metrics_of(&split.train_ids)?.context("training split has no labeled object")?;
    let summary = TrainSummary {
        checkpoint: &args.out,
        epochs: h.len(),
        initial_loss: h.first().map_or(f64::NAN, |s| s.loss.total),
        final_loss: h.last().map_or(f64::NAN, |s| s.loss.total),
        train: train_metrics,
        test: metrics_of(&split.test_ids)?,
    };
    let v = serde_json::to_value(&summary)?;
    fs::write(run_dir.join("metrics.json"), serde_json::to_string_pretty(&v)?)?;
    Ok(v)
}

fn default_run_dir(ckpt: &Path) -> PathBuf {
    let stem = ckpt.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
    ckpt.with_file_name(format!("{stem}.run"))
}

/// Metrics over the labeled clouds of `data`, or over the test ids of a
/// split file written by `train`.
pub fn eval(ckpt: &Path, data: &Path, split: Option<&Path>) -> Result<Value> {
    let model = Detector::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let all = load_dir(data)?;
    let set: Vec<_> = match split {
        Some(p) => {
            let s: DatasetSplit = serde_json::from_str(&fs::read_to_string(p)?)?;
            arcal_train::dataset::select(&all, &s.test_ids)?
        }
        None => all.iter().collect(),
    };
    let m = evaluate(&model, &set)?;
    Ok(serde_json::to_value(m)?)
}

pub fn detect(ckpt: &Path, cloud: &Path) -> Result<Value> {
    let model = Detector::load(ckpt).with_context(|| format!("loading {}", ckpt.display()))?;
    let pc = load_ply(cloud)?;
    let d = model.detect(&pc)?;
    let id = cloud.file_stem().map_or(String::new(), |s| s.to_string_lossy().into_owned());
    Ok(json!({ "box": Label::from_box(id, &d.bbox), "score": d.score }))
}
