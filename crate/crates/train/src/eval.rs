//! Per-cloud evaluation at full resolution.

use arcal_core::geometry::{box_iou, yaw_error_mod_pi};
use arcal_core::{LabeledCloud, OrientedBox};
use arcal_detector::Detector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clouds per forward pass during evaluation.
pub const EVAL_BATCH_SIZE: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// Labeled clouds scored; object-free clouds are not.
    pub clouds: usize,
    pub mean_iou: f64,
    /// Meters.
    pub mean_center_error: f64,
    /// Radians, modulo π.
    pub mean_yaw_error: f64,
    pub detection_rate_25: f64,
    pub detection_rate_50: f64,
    pub batch_size: usize,
}

/// Scores `(prediction, ground truth)` pairs.
pub fn score(pairs: &[(OrientedBox, OrientedBox)]) -> Result<Metrics> {
    if pairs.is_empty() {
        return Err(Error::Validation("nothing to evaluate: no labeled cloud".into()));
    }
    let n = pairs.len() as f64;
    let ious: Vec<f64> = pairs.iter().map(|(p, g)| box_iou(p, g)).collect();
    let rate = |t: f64| ious.iter().filter(|&&v| v >= t).count() as f64 / n;
    Ok(Metrics {
        clouds: pairs.len(),
        mean_iou: ious.iter().sum::<f64>() / n,
        mean_center_error: pairs.iter().map(|(p, g)| (p.center() - g.center()).norm()).sum::<f64>() / n,
        mean_yaw_error: pairs.iter().map(|(p, g)| yaw_error_mod_pi(p.yaw(), g.yaw())).sum::<f64>() / n,
        detection_rate_25: rate(0.25),
        detection_rate_50: rate(0.5),
        batch_size: EVAL_BATCH_SIZE,
    })
}

/// Detects in every labeled cloud, one cloud per forward pass, keeping all
/// of its points.
pub fn evaluate(model: &Detector, clouds: &[&LabeledCloud]) -> Result<Metrics> {
    let pairs = clouds
        .par_iter()
        .filter_map(|lc| lc.label.map(|gt| (lc, gt)))
        .map(|(lc, gt)| Ok((model.detect(&lc.cloud)?.bbox, gt)))
        .collect::<Result<Vec<_>>>()?;
    score(&pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use arcal_core::{Point3, Vector3};

    fn b(x: f64, yaw: f64) -> OrientedBox {
        OrientedBox::new(Point3::new(x, 0.5, 0.2), Vector3::new(0.6, 0.4, 0.4), yaw).unwrap()
    }

    #[test]
    fn perfect_predictions() {
        let gts = [b(0.0, 0.1), b(1.0, -2.0), b(-1.5, 3.0)];
        let m = score(&gts.iter().map(|g| (*g, *g)).collect::<Vec<_>>()).unwrap();
        assert!((m.mean_iou - 1.0).abs() < 1e-12);
        assert_eq!((m.mean_center_error, m.mean_yaw_error), (0.0, 0.0));
        assert_eq!((m.detection_rate_25, m.detection_rate_50), (1.0, 1.0));
    }

    #[test]
    fn anchor_at_origin_misses() {
        let anchor = OrientedBox::new(Point3::origin(), Vector3::new(0.5, 0.4, 0.3), 0.0).unwrap();
        let gts = [b(2.0, 0.3), b(-3.0, 1.0)];
        let m = score(&gts.iter().map(|g| (anchor, *g)).collect::<Vec<_>>()).unwrap();
        assert_eq!(m.mean_iou, 0.0);
        assert_eq!(m.detection_rate_25, 0.0);
    }

    #[test]
    fn yaw_error_ignores_half_turns() {
        let m = score(&[(b(0.0, 0.2 + std::f64::consts::PI), b(0.0, 0.2))]).unwrap();
        assert!(m.mean_yaw_error < 1e-12);
        assert!(score(&[]).is_err());
    }
}
