use arcal_core::AugmentConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub base_lr: f64,
    /// `(epoch, factor)`: from `epoch` on the rate is multiplied by `factor`.
    pub lr_milestones: Vec<(usize, f64)>,
    /// Points per sample after augmentation.
    pub subsample_n: usize,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub adam: AdamConfig,
    /// Periodic checkpoint cadence in epochs.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 480,
            batch_size: 8,
            base_lr: 0.001,
            lr_milestones: vec![(200, 0.1), (400, 0.1)],
            subsample_n: 25_000,
            seed: 0,
            augment: AugmentConfig::default(),
            adam: AdamConfig::default(),
            checkpoint_every: 20,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.epochs == 0 || self.batch_size == 0 || self.subsample_n == 0 || self.checkpoint_every == 0 {
            return bad("epochs, batch size, subsample size and checkpoint cadence must be positive".into());
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return bad(format!("base learning rate must be positive, got {}", self.base_lr));
        }
        for w in self.lr_milestones.windows(2) {
            if w[1].0 <= w[0].0 {
                return bad(format!("milestones must be strictly increasing, got {} then {}", w[0].0, w[1].0));
            }
        }
        if let Some((e, f)) = self.lr_milestones.iter().find(|(_, f)| !(*f > 0.0 && *f <= 1.0)) {
            return bad(format!("milestone factor at epoch {e} must lie in (0, 1], got {f}"));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return bad("Adam needs beta1, beta2 in [0, 1) and eps > 0".into());
        }
        Ok(())
    }

    /// Learning rate for a 0-based epoch.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr_milestones
            .iter()
            .filter(|(m, _)| *m <= epoch)
            .fold(self.base_lr, |lr, (_, f)| lr * f)
    }
}

/// Parses `200:0.1,400:0.1`.
pub fn parse_milestones(s: &str) -> Result<Vec<(usize, f64)>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|part| {
            let (e, f) = part
                .split_once(':')
                .ok_or_else(|| Error::Validation(format!("milestone {part:?} is not EPOCH:FACTOR")))?;
            let e = e.trim().parse().map_err(|_| Error::Validation(format!("bad milestone epoch {e:?}")))?;
            let f = f.trim().parse().map_err(|_| Error::Validation(format!("bad milestone factor {f:?}")))?;
            Ok((e, f))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0), 0.001);
        assert_eq!(c.lr_at(199), 0.001);
        assert!((c.lr_at(200) - 1e-4).abs() < 1e-18);
        assert!((c.lr_at(400) - 1e-5).abs() < 1e-18);
        assert_eq!(c.lr_at(479), c.lr_at(400));
        let mut prev = f64::INFINITY;
        for e in 0..c.epochs {
            assert!(c.lr_at(e) <= prev);
            prev = c.lr_at(e);
        }
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let mut c = TrainConfig::default();
        c.lr_milestones = vec![(400, 0.1), (200, 0.1)];
        assert!(c.validate().is_err());
        c.lr_milestones = vec![(200, 1.5)];
        assert!(c.validate().is_err());
        c.lr_milestones = vec![(200, 1.0)];
        assert!(c.validate().is_ok());
    }

    #[test]
    fn milestone_parsing() {
        assert_eq!(parse_milestones("200:0.1,400:0.1").unwrap(), vec![(200, 0.1), (400, 0.1)]);
        assert_eq!(parse_milestones("").unwrap(), vec![]);
        assert!(parse_milestones("200").is_err());
        assert!(parse_milestones("x:0.1").is_err());
    }
}
