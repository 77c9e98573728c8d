//! Training harness for the arcal detector: labeled corpora and splits,
//! synthetic scenes, the Adam training loop with deterministic resume, and
//! evaluation metrics.

pub mod adam;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod synth;
pub mod train;

pub use adam::Adam;
pub use config::{parse_milestones, AdamConfig, TrainConfig};
pub use dataset::{default_train_count, load_dir, save_dir, split_dataset, DatasetSplit};
pub use error::{Error, Result};
pub use eval::{evaluate, score, Metrics, EVAL_BATCH_SIZE};
pub use synth::{base_corners, synth_corpus, synth_scene, SceneSpec, SynthScene};
pub use train::{epoch_batches, mean_label_size, prepare_sample, resume, train, EpochStats, RunOptions, TrainRun, TrainState};
