//! Serialized inference.
//!
//! One worker runs detections one at a time against an immutable model.
//! Callers beyond the pending limit (queued plus running) are turned away
//! immediately instead of waiting.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use arcal_core::PointCloud;
use arcal_detector::{Detection, Detector};
use tokio::sync::{mpsc, oneshot};

pub const DEFAULT_MAX_PENDING: usize = 16;

/// Anything that turns a cloud into a detection.
pub type InferFn = Arc<dyn Fn(&PointCloud) -> arcal_detector::Result<Detection> + Send + Sync>;

pub fn detector_fn(model: Arc<Detector>) -> InferFn {
    Arc::new(move |c| model.detect(c))
}

#[derive(Debug, thiserror::Error)]
pub enum QueueError {
    #[error("inference queue is full ({0} pending)")]
    Full(usize),
    #[error("inference worker stopped")]
    Stopped,
    #[error(transparent)]
    Detector(#[from] arcal_detector::Error),
}

struct Job {
    cloud: PointCloud,
    reply: oneshot::Sender<(arcal_detector::Result<Detection>, Duration)>,
}

#[derive(Clone)]
pub struct InferenceQueue {
    tx: mpsc::UnboundedSender<Job>,
    pending: Arc<AtomicUsize>,
    max_pending: usize,
}

/// Result of one queued detection with its wall-clock inference time.
#[derive(Debug, Clone, Copy)]
pub struct Timed {
    pub detection: Detection,
    pub elapsed: Duration,
}

impl InferenceQueue {
    /// Starts the worker on the current tokio runtime.
    pub fn spawn(infer: InferFn, max_pending: usize) -> Self {
        let (tx, mut rx) = mpsc::unbounded_channel::<Job>();
        tokio::spawn(async move {
            while let Some(job) = rx.recv().await {
                let f = infer.clone();
                let out = tokio::task::spawn_blocking(move || {
                    let t = Instant::now();
                    let r = f(&job.cloud);
                    (job.reply, r, t.elapsed())
                })
                .await;
                if let Ok((reply, r, dt)) = out {
                    let _ = reply.send((r, dt));
                }
            }
        });
        Self {
            tx,
            pending: Arc::new(AtomicUsize::new(0)),
            max_pending,
        }
    }

    pub fn pending(&self) -> usize {
        self.pending.load(Ordering::SeqCst)
    }

    pub async fn detect(&self, cloud: PointCloud) -> Result<Timed, QueueError> {
        let n = self.pending.fetch_add(1, Ordering::SeqCst);
        let _guard = Pending(self.pending.clone());
        if n >= self.max_pending {
            return Err(QueueError::Full(n));
        }
        let (reply, rx) = oneshot::channel();
        self.tx.send(Job { cloud, reply }).map_err(|_| QueueError::Stopped)?;
        let (r, elapsed) = rx.await.map_err(|_| QueueError::Stopped)?;
        Ok(Timed {
            detection: r?,
            elapsed,
        })
    }
}

struct Pending(Arc<AtomicUsize>);

impl Drop for Pending {
    fn drop(&mut self) {
        self.0.fetch_sub(1, Ordering::SeqCst);
    }
}
