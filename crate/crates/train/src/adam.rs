//! Adam with bias correction, one moment pair per named tensor.

use arcal_detector::tape::Mat;

use crate::config::AdamConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    /// Steps taken so far.
    pub t: u64,
    pub m: Vec<(String, Mat)>,
    pub v: Vec<(String, Mat)>,
}

impl Adam {
    /// Zero moments shaped like `params`.
    pub fn new<'a>(config: AdamConfig, params: impl IntoIterator<Item = (String, &'a Mat)>) -> Self {
        let m: Vec<(String, Mat)> = params.into_iter().map(|(n, p)| (n, Mat::zeros(p.dim()))).collect();
        Self {
            config,
            t: 0,
            v: m.clone(),
            m,
        }
    }

    /// One update of every parameter, `params` and `grads` in the order the
    /// optimizer was created with.
    pub fn step(&mut self, params: Vec<(String, &mut Mat)>, grads: &[Mat], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Validation(format!(
                "optimizer tracks {} tensors, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (((name, p), g), ((mn, m), (_, v))) in params.into_iter().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            if &name != mn || p.dim() != g.dim() || p.dim() != m.dim() {
                return Err(Error::Validation(format!("optimizer state mismatch at {name}")));
            }
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // bias correction makes the first step exactly lr · sign(g) up to eps
        let mut w = Mat::from_elem((1, 2), 1.0);
        let mut opt = Adam::new(AdamConfig::default(), [("w".to_string(), &w)]);
        let g = ndarray::array![[0.5, -2.0]];
        opt.step(vec![("w".into(), &mut w)], &[g], 0.1).unwrap();
        assert!((w[(0, 0)] - 0.9).abs() < 1e-6);
        assert!((w[(0, 1)] - 1.1).abs() < 1e-6);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut w = Mat::from_elem((1, 1), 5.0);
        let mut opt = Adam::new(AdamConfig::default(), [("w".to_string(), &w)]);
        for _ in 0..2000 {
            let g = &w * 2.0;
            opt.step(vec![("w".into(), &mut w)], &[g], 0.05).unwrap();
        }
        assert!(w[(0, 0)].abs() < 1e-3);
    }
}
