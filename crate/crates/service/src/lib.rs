//! HTTP front end of the calibration workflow: cloud upload, three-corner
//! annotation, label persistence, detection and AR-to-map calibration, with
//! a websocket channel announcing finished detections and static hosting of
//! the annotation UI.

pub mod api;
pub mod queue;
pub mod schema;
pub mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use arcal_detector::Detector;
use tokio::net::TcpListener;
use tokio::sync::broadcast;

pub use api::{parse_label, router, AppState, Shared, DEFAULT_MAX_UPLOAD, DEFAULT_SCORE_THRESHOLD};
pub use queue::{detector_fn, InferFn, InferenceQueue, QueueError, DEFAULT_MAX_PENDING};
pub use store::{CloudRecord, Store, StoreError};

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub port: u16,
    pub data_dir: PathBuf,
    pub ckpt: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
    pub max_upload: usize,
    pub score_threshold: f64,
    pub max_pending: usize,
}

impl ServiceConfig {
    pub fn new(data_dir: impl Into<PathBuf>) -> Self {
        Self {
            port: 8080,
            data_dir: data_dir.into(),
            ckpt: None,
            ui_dir: None,
            max_upload: DEFAULT_MAX_UPLOAD,
            score_threshold: DEFAULT_SCORE_THRESHOLD,
            max_pending: DEFAULT_MAX_PENDING,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("loading model: {0}")]
    Model(#[from] arcal_detector::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

/// State with an optional detector; must run inside a tokio runtime.
pub fn build_state(cfg: &ServiceConfig, infer: Option<InferFn>) -> Result<Shared, Error> {
    let store = Store::open(&cfg.data_dir)?;
    let (events, _) = broadcast::channel(64);
    Ok(Arc::new(AppState {
        store,
        queue: infer.map(|f| InferenceQueue::spawn(f, cfg.max_pending)),
        events,
        score_threshold: cfg.score_threshold,
    }))
}

/// A bound, not yet serving, server.
pub struct Server {
    listener: TcpListener,
    app: axum::Router,
}

impl Server {
    pub async fn bind(cfg: &ServiceConfig, infer: Option<InferFn>) -> Result<Self, Error> {
        let infer = match (infer, &cfg.ckpt) {
            (Some(f), _) => Some(f),
            (None, Some(p)) => Some(detector_fn(Arc::new(Detector::load(p)?))),
            (None, None) => None,
        };
        let state = build_state(cfg, infer)?;
        let app = router(state, cfg.ui_dir.clone(), cfg.max_upload);
        let listener = TcpListener::bind(SocketAddr::from(([0, 0, 0, 0], cfg.port))).await?;
        Ok(Self { listener, app })
    }

    pub fn local_addr(&self) -> std::io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub async fn run(self) -> std::io::Result<()> {
        axum::serve(self.listener, self.app).await
    }
}
