//! The training loop.
//!
//! Every epoch draws its randomness from a generator seeded by the master
//! seed with the epoch as stream id, so a run resumed from a checkpoint
//! replays exactly what an uninterrupted run would have done.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use arcal_core::augmentation::{augment, subsample_indices};
use arcal_core::{LabeledCloud, OrientedBox, Point3};
use arcal_detector::losses::{assign_batch, losses_with_grads, LossBreakdown, LossWeights};
use arcal_detector::tape::{Mat, Tape};
use arcal_detector::weights::Kind;
use arcal_detector::{Archive, Detector, Mode, NetworkConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adam::Adam;
use crate::config::TrainConfig;
use crate::dataset::{select, DatasetSplit};
use crate::error::{io, Error, Result};
use crate::eval::{evaluate, Metrics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    /// 0-based.
    pub epoch: usize,
    pub lr: f64,
    /// Mean over the epoch's batches.
    pub loss: LossBreakdown,
    /// Test-split metrics, on checkpoint epochs only.
    pub test: Option<Metrics>,
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub detector: Detector,
    pub adam: Adam,
    pub history: Vec<EpochStats>,
    pub best_test_iou: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct StateMeta {
    train_config: TrainConfig,
    history: Vec<EpochStats>,
    adam_t: u64,
    best_test_iou: Option<f64>,
}

const M_PREFIX: &str = "adam.m.";
const V_PREFIX: &str = "adam.v.";

impl TrainState {
    pub fn fresh(net: NetworkConfig, cfg: &TrainConfig) -> Result<Self> {
        let detector = Detector::new(net)?;
        let adam = Adam::new(cfg.adam, detector.weights.tensors(Kind::Trainable));
        Ok(Self {
            detector,
            adam,
            history: Vec::new(),
            best_test_iou: None,
        })
    }

    /// Epochs completed.
    pub fn epoch(&self) -> usize {
        self.detector.epoch
    }

    pub fn to_archive(&self, cfg: &TrainConfig) -> Archive {
        let meta = StateMeta {
            train_config: cfg.clone(),
            history: self.history.clone(),
            adam_t: self.adam.t,
            best_test_iou: self.best_test_iou,
        };
        let mut a = self.detector.to_archive(serde_json::to_value(meta).expect("state serializes"));
        for (prefix, moments) in [(M_PREFIX, &self.adam.m), (V_PREFIX, &self.adam.v)] {
            a.tensors.extend(moments.iter().map(|(n, m)| (format!("{prefix}{n}"), m.clone())));
        }
        a
    }

    /// The state and the training configuration it was saved with.
    pub fn from_archive(a: &Archive) -> Result<(Self, TrainConfig)> {
        let meta: StateMeta = serde_json::from_value(a.meta.clone())
            .map_err(|e| Error::Validation(format!("checkpoint holds no training state: {e}")))?;
        let detector = Detector::from_archive(a)?;
        let mut adam = Adam::new(meta.train_config.adam, detector.weights.tensors(Kind::Trainable));
        adam.t = meta.adam_t;
        for (prefix, moments) in [(M_PREFIX, &mut adam.m), (V_PREFIX, &mut adam.v)] {
            for (n, m) in moments.iter_mut() {
                let src = a
                    .tensor(&format!("{prefix}{n}"))
                    .ok_or_else(|| Error::Validation(format!("checkpoint lacks optimizer tensor {prefix}{n}")))?;
                if src.dim() != m.dim() {
                    return Err(Error::Validation(format!("optimizer tensor {prefix}{n} has the wrong shape")));
                }
                m.assign(src);
            }
        }
        let state = Self {
            detector,
            adam,
            history: meta.history,
            best_test_iou: meta.best_test_iou,
        };
        Ok((state, meta.train_config))
    }

    pub fn save(&self, cfg: &TrainConfig, path: impl AsRef<Path>) -> Result<()> {
        Ok(self.to_archive(cfg).save(path)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, TrainConfig)> {
        Self::from_archive(&Archive::load(path)?)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Where periodic, best and last-good checkpoints and `history.json`
    /// go. Nothing is written when `None`.
    pub run_dir: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    pub state: TrainState,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainRun {
    pub fn history(&self) -> &[EpochStats] {
        &self.state.history
    }
}

/// Mean `(l, w, h)` of the labeled clouds, `None` when none is labeled.
pub fn mean_label_size<'a>(clouds: impl IntoIterator<Item = &'a LabeledCloud>) -> Option<[f64; 3]> {
    let sizes: Vec<_> = clouds.into_iter().filter_map(|c| c.label.map(|b| b.size())).collect();
    if sizes.is_empty() {
        return None;
    }
    let m = sizes.iter().sum::<arcal_core::Vector3<f64>>() / sizes.len() as f64;
    Some([m.x, m.y, m.z])
}

pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);
    rng
}

/// Augments and subsamples one sample to exactly `cfg.subsample_n` points.
/// The box may end up with no member points; that is kept as is.
pub fn prepare_sample(lc: &LabeledCloud, cfg: &TrainConfig, seed: u64) -> Result<LabeledCloud> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let aug = augment(lc, &cfg.augment, &mut rng)?;
    let idx = subsample_indices(aug.cloud.len(), cfg.subsample_n, &mut rng)?;
    Ok(LabeledCloud {
        cloud_id: aug.cloud_id,
        cloud: aug.cloud.select(&idx),
        label: aug.label,
    })
}

/// The epoch's shuffled, prepared samples split into batches.
pub fn epoch_batches(train: &[&LabeledCloud], cfg: &TrainConfig, epoch: usize) -> Result<Vec<Vec<LabeledCloud>>> {
    let mut rng = epoch_rng(cfg.seed, epoch);
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut rng);
    let seeds: Vec<u64> = order.iter().map(|_| rng.random()).collect();
    let samples = order
        .par_iter()
        .zip(seeds)
        .map(|(&i, s)| prepare_sample(train[i], cfg, s))
        .collect::<Result<Vec<_>>>()?;
    Ok(samples.chunks(cfg.batch_size).map(|c| c.to_vec()).collect())
}

enum Step {
    Done(LossBreakdown),
    Diverged,
}

fn step(state: &mut TrainState, batch: &[LabeledCloud], lr: f64) -> Result<Step> {
    let det = &mut state.detector;
    let mut tape = Tape::new(true);
    let clouds: Vec<&[Point3<f64>]> = batch.iter().map(|s| s.cloud.points()).collect();
    let fp = det.forward(&mut tape, &clouds, Mode::Train)?;
    let gts: Vec<Option<OrientedBox>> = batch.iter().map(|s| s.label).collect();
    let ta = assign_batch(&tape, &fp, &gts)?;
    let (loss, seeds) = match losses_with_grads(&tape, &fp, &ta, det.anchor(), &LossWeights::default()) {
        Ok(r) => r,
        Err(arcal_detector::Error::Diverged(_)) => return Ok(Step::Diverged),
        Err(e) => return Err(e.into()),
    };
    if !loss.total.is_finite() {
        return Ok(Step::Diverged);
    }
    let grads = tape.backward(&seeds);
    let vars: HashMap<&str, _> = fp.params.iter().map(|(n, v)| (n.as_str(), *v)).collect();
    let mut g = Vec::new();
    for (name, p) in det.weights.tensors(Kind::Trainable) {
        let gm = vars
            .get(name.as_str())
            .and_then(|v| grads.get(*v))
            .cloned()
            .unwrap_or_else(|| Mat::zeros(p.dim()));
        if !gm.iter().all(|x| x.is_finite()) {
            return Ok(Step::Diverged);
        }
        g.push(gm);
    }
    state.adam.step(det.weights.tensors_mut(Kind::Trainable), &g, lr)?;
    det.weights.update_running(&fp.bn_stats, det.config.bn_momentum);
    Ok(Step::Done(loss))
}

fn write_history(dir: &Path, h: &[EpochStats]) -> Result<()> {
    let p = dir.join("history.json");
    fs::write(&p, serde_json::to_string_pretty(h).expect("history serializes")).map_err(io(&p))
}

/// Fresh run. The network's size anchor is replaced by the mean size of the
/// training labels.
pub fn train(data: &[LabeledCloud], split: &DatasetSplit, net: NetworkConfig, cfg: &TrainConfig, opts: &RunOptions) -> Result<TrainRun> {
    let train_set = select(data, &split.train_ids)?;
    let net = match mean_label_size(train_set.iter().copied()) {
        Some(a) => net.with_anchor(a),
        None => net,
    };
    resume(data, split, TrainState::fresh(net, cfg)?, cfg, opts)
}

/// Continues `state` up to `cfg.epochs` epochs.
pub fn resume(data: &[LabeledCloud], split: &DatasetSplit, mut state: TrainState, cfg: &TrainConfig, opts: &RunOptions) -> Result<TrainRun> {
    cfg.validate()?;
    let train_set = select(data, &split.train_ids)?;
    let test_set = select(data, &split.test_ids)?;
    if train_set.is_empty() {
        return Err(Error::Validation("training set is empty".into()));
    }
    let has_test_labels = test_set.iter().any(|c| c.has_object());
    if let Some(d) = &opts.run_dir {
        fs::create_dir_all(d).map_err(io(d))?;
    }
    let mut checkpoints = Vec::new();

    for epoch in state.epoch()..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let batches = epoch_batches(&train_set, cfg, epoch)?;
        let mut sum = LossBreakdown::default();
        for batch in &batches {
            match step(&mut state, batch, lr)? {
                Step::Done(l) => {
                    sum.vote += l.vote;
                    sum.boxes += l.boxes;
                    sum.sem += l.sem;
                    sum.total += l.total;
                }
                Step::Diverged => {
                    let checkpoint = match &opts.run_dir {
                        Some(d) => {
                            let p = d.join("last-good.ckpt");
                            state.save(cfg, &p)?;
                            Some(p)
                        }
                        None => None,
                    };
                    return Err(Error::Diverged { epoch, checkpoint });
                }
            }
        }
        let n = batches.len() as f64;
        let loss = LossBreakdown {
            vote: sum.vote / n,
            boxes: sum.boxes / n,
            sem: sum.sem / n,
            total: sum.total / n,
        };
        state.detector.epoch = epoch + 1;

        let periodic = (epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs;
        let test = if periodic && has_test_labels {
            Some(evaluate(&state.detector, &test_set)?)
        } else {
            None
        };
        log::info!(
            "epoch {:>4} lr {:.1e} loss {:.4} (vote {:.4} box {:.4} sem {:.4}){}",
            epoch + 1,
            lr,
            loss.total,
            loss.vote,
            loss.boxes,
            loss.sem,
            test.map(|m| format!(" test IoU {:.3}", m.mean_iou)).unwrap_or_default()
        );
        state.history.push(EpochStats { epoch, lr, loss, test });
        let improved = test.is_some_and(|m| state.best_test_iou.map_or(true, |b| m.mean_iou > b));
        if improved {
            state.best_test_iou = test.map(|m| m.mean_iou);
        }

        if let Some(d) = &opts.run_dir {
            write_history(d, &state.history)?;
            if (epoch + 1) % cfg.checkpoint_every == 0 {
                let p = d.join(format!("epoch-{:04}.ckpt", epoch + 1));
                state.save(cfg, &p)?;
                checkpoints.push(p);
            }
            if improved {
                let p = d.join("best.ckpt");
                state.save(cfg, &p)?;
                checkpoints.push(p);
            }
        }
    }
    Ok(TrainRun { state, checkpoints })
}
