use std::path::PathBuf;

use anyhow::Result;
use arcal_cli::{Preset, TrainArgs};
use arcal_core::AugmentConfig;
use arcal_service::{Server, ServiceConfig, DEFAULT_MAX_PENDING, DEFAULT_MAX_UPLOAD, DEFAULT_SCORE_THRESHOLD};
use arcal_train::{parse_milestones, SceneSpec, TrainConfig};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "arcal", version, about = "Robot detection and AR-to-map calibration")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate labeled synthetic scenes.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Make every k-th scene object-free.
        #[arg(long)]
        empty_every: Option<usize>,
        #[arg(long, default_value_t = SceneSpec::default().floor_points)]
        floor_points: usize,
        #[arg(long, default_value_t = SceneSpec::default().robot_points)]
        robot_points: usize,
    },
    /// Train a detector on a directory of PLY/JSON pairs.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 480)]
        epochs: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
        #[arg(long, default_value_t = 0.001)]
        lr: f64,
        /// `epoch:factor` pairs.
        #[arg(long, default_value = "200:0.1,400:0.1")]
        milestones: String,
        #[arg(long, default_value_t = 25_000)]
        subsample: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Preset::Paper)]
        preset: Preset,
        #[arg(long)]
        run_dir: Option<PathBuf>,
        /// Continue from a training checkpoint, with the recipe stored in it.
        #[arg(long)]
        resume: Option<PathBuf>,
        #[arg(long)]
        train_count: Option<usize>,
        #[arg(long, default_value_t = 20)]
        checkpoint_every: usize,
        #[arg(long)]
        no_augment: bool,
    },
    /// Detection metrics of a checkpoint.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Split file from a training run; its test ids are evaluated.
        #[arg(long)]
        split: Option<PathBuf>,
    },
    /// Detect the robot in one cloud.
    Detect {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        cloud: PathBuf,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, env = "ARCAL_PORT", default_value_t = 8080)]
        port: u16,
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, env = "ARCAL_DATA_DIR", default_value = "data")]
        data: PathBuf,
        /// Directory with the annotation UI bundle.
        #[arg(long, env = "ARCAL_UI_DIR")]
        ui: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_MAX_UPLOAD)]
        max_upload: usize,
        #[arg(long, default_value_t = DEFAULT_SCORE_THRESHOLD)]
        score_threshold: f64,
        #[arg(long, default_value_t = DEFAULT_MAX_PENDING)]
        max_pending: usize,
    },
}

fn print(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("JSON values serialize"));
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Synth {
            count,
            out,
            seed,
            empty_every,
            floor_points,
            robot_points,
        } => {
            let spec = SceneSpec {
                floor_points,
                robot_points,
                ..SceneSpec::default()
            };
            print(&arcal_cli::synth(&out, count, seed, &spec, empty_every)?);
        }
        Cmd::Train {
            data,
            epochs,
            batch,
            lr,
            milestones,
            subsample,
            seed,
            out,
            preset,
            run_dir,
            resume,
            train_count,
            checkpoint_every,
            no_augment,
        } => {
            let config = TrainConfig {
                epochs,
                batch_size: batch,
                base_lr: lr,
                lr_milestones: parse_milestones(&milestones)?,
                subsample_n: subsample,
                seed,
                augment: if no_augment { AugmentConfig::disabled() } else { AugmentConfig::default() },
                checkpoint_every,
                ..TrainConfig::default()
            };
            let args = TrainArgs {
                data,
                out,
                run_dir,
                resume,
                preset,
                train_count,
                config,
            };
            print(&arcal_cli::train(&args)?);
        }
        Cmd::Eval { ckpt, data, split } => print(&arcal_cli::eval(&ckpt, &data, split.as_deref())?),
        Cmd::Detect { ckpt, cloud } => print(&arcal_cli::detect(&ckpt, &cloud)?),
        Cmd::Serve {
            port,
            ckpt,
            data,
            ui,
            max_upload,
            score_threshold,
            max_pending,
        } => {
            let cfg = ServiceConfig {
                port,
                ckpt,
                ui_dir: ui,
                max_upload,
                score_threshold,
                max_pending,
                ..ServiceConfig::new(data)
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async {
                let server = Server::bind(&cfg, None).await?;
                log::info!("listening on {}", server.local_addr()?);
                server.run().await?;
                anyhow::Ok(())
            })?;
        }
    }
    Ok(())
}
