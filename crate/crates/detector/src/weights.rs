//! Parameter containers. Every tensor has a stable dotted name such as
//! `sa1.0.w` or `head.2.b`; checkpoints and the optimizer key on these.

use rand::Rng;

use crate::config::{NetworkConfig, OUTPUT_CHANNELS};
use crate::tape::{BatchStats, Mat};

/// Affine batch normalization with running statistics, all stored `1 × c`.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Mat,
    pub beta: Mat,
    pub mean: Mat,
    pub var: Mat,
}

impl BatchNorm {
    fn new(c: usize) -> Self {
        Self {
            gamma: Mat::ones((1, c)),
            beta: Mat::zeros((1, c)),
            mean: Mat::zeros((1, c)),
            var: Mat::ones((1, c)),
        }
    }

    /// `running = momentum · running + (1 − momentum) · batch`.
    pub fn update(&mut self, stats: &BatchStats, momentum: f64) {
        let mut m = self.mean.row_mut(0);
        m *= momentum;
        m.scaled_add(1.0 - momentum, &stats.mean);
        let mut v = self.var.row_mut(0);
        v *= momentum;
        v.scaled_add(1.0 - momentum, &stats.var);
    }
}

/// Fully connected layer applied to every row. Hidden layers carry batch
/// normalization followed by a rectifier and no bias; output layers carry a
/// bias and nothing else.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `in × out`.
    pub w: Mat,
    pub b: Option<Mat>,
    pub bn: Option<BatchNorm>,
}

impl Dense {
    fn init<R: Rng + ?Sized>(fan_in: usize, out: usize, hidden: bool, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let w = Mat::from_shape_simple_fn((fan_in, out), || rng.random_range(-bound..bound));
        if hidden {
            Self {
                w,
                b: None,
                bn: Some(BatchNorm::new(out)),
            }
        } else {
            Self {
                w,
                b: Some(Mat::zeros((1, out))),
                bn: None,
            }
        }
    }

    pub fn in_width(&self) -> usize {
        self.w.nrows()
    }

    pub fn out_width(&self) -> usize {
        self.w.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    /// `widths` excludes the input. With `linear_last` the final layer is an
    /// output layer.
    pub fn init<R: Rng + ?Sized>(input: usize, widths: &[usize], linear_last: bool, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = input;
        for (i, &w) in widths.iter().enumerate() {
            let hidden = !(linear_last && i + 1 == widths.len());
            layers.push(Dense::init(fan_in, w, hidden, rng));
            fan_in = w;
        }
        Self { layers }
    }

    pub fn out_width(&self) -> usize {
        self.layers.last().map_or(0, Dense::out_width)
    }
}

/// All network weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub sa: Vec<Mlp>,
    pub fp: Vec<Mlp>,
    pub vote: Mlp,
    pub proposal: Mlp,
    pub head: Mlp,
}

/// Which tensors a visitor sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Trainable,
    Running,
}

impl Weights {
    pub fn init<R: Rng + ?Sized>(cfg: &NetworkConfig, rng: &mut R) -> Self {
        let mut sa = Vec::with_capacity(cfg.sa.len());
        let mut width = 0;
        let mut sa_widths = Vec::new();
        for spec in &cfg.sa {
            sa.push(Mlp::init(3 + width, &spec.mlp, false, rng));
            width = *spec.mlp.last().unwrap();
            sa_widths.push(width);
        }
        // fp1 lifts sa4 onto sa3, fp2 lifts the result onto sa2
        let fp1 = Mlp::init(sa_widths[3] + sa_widths[2], &cfg.fp[0], false, rng);
        let fp2 = Mlp::init(fp1.out_width() + sa_widths[1], &cfg.fp[1], false, rng);
        let f = fp2.out_width();
        let vote = Mlp::init(3 + f, &[3 + f, 3 + f, 3 + f], true, rng);
        let proposal = Mlp::init(3 + f, &cfg.proposal.mlp, false, rng);
        let mut head_widths = cfg.proposal.head.clone();
        head_widths.push(OUTPUT_CHANNELS);
        let head = Mlp::init(proposal.out_width(), &head_widths, true, rng);
        Self {
            sa,
            fp: vec![fp1, fp2],
            vote,
            proposal,
            head,
        }
    }

    fn modules(&self) -> Vec<(String, &Mlp)> {
        let mut out: Vec<(String, &Mlp)> = Vec::new();
        for (i, m) in self.sa.iter().enumerate() {
            out.push((format!("sa{}", i + 1), m));
        }
        for (i, m) in self.fp.iter().enumerate() {
            out.push((format!("fp{}", i + 1), m));
        }
        out.push(("vote".into(), &self.vote));
        out.push(("proposal".into(), &self.proposal));
        out.push(("head".into(), &self.head));
        out
    }

    fn modules_mut(&mut self) -> Vec<(String, &mut Mlp)> {
        let mut out: Vec<(String, &mut Mlp)> = Vec::new();
        for (i, m) in self.sa.iter_mut().enumerate() {
            out.push((format!("sa{}", i + 1), m));
        }
        for (i, m) in self.fp.iter_mut().enumerate() {
            out.push((format!("fp{}", i + 1), m));
        }
        out.push(("vote".into(), &mut self.vote));
        out.push(("proposal".into(), &mut self.proposal));
        out.push(("head".into(), &mut self.head));
        out
    }

    /// Named tensors of one kind, in a fixed order.
    pub fn tensors(&self, kind: Kind) -> Vec<(String, &Mat)> {
        let mut out = Vec::new();
        for (name, m) in self.modules() {
            for (j, l) in m.layers.iter().enumerate() {
                let p = format!("{name}.{j}");
                match kind {
                    Kind::Trainable => {
                        out.push((format!("{p}.w"), &l.w));
                        if let Some(b) = &l.b {
                            out.push((format!("{p}.b"), b));
                        }
                        if let Some(bn) = &l.bn {
                            out.push((format!("{p}.bn.gamma"), &bn.gamma));
                            out.push((format!("{p}.bn.beta"), &bn.beta));
                        }
                    }
                    Kind::Running => {
                        if let Some(bn) = &l.bn {
                            out.push((format!("{p}.bn.mean"), &bn.mean));
                            out.push((format!("{p}.bn.var"), &bn.var));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn tensors_mut(&mut self, kind: Kind) -> Vec<(String, &mut Mat)> {
        let mut out = Vec::new();
        for (name, m) in self.modules_mut() {
            for (j, l) in m.layers.iter_mut().enumerate() {
                let p = format!("{name}.{j}");
                match kind {
                    Kind::Trainable => {
                        out.push((format!("{p}.w"), &mut l.w));
                        if let Some(b) = &mut l.b {
                            out.push((format!("{p}.b"), b));
                        }
                        if let Some(bn) = &mut l.bn {
                            out.push((format!("{p}.bn.gamma"), &mut bn.gamma));
                            out.push((format!("{p}.bn.beta"), &mut bn.beta));
                        }
                    }
                    Kind::Running => {
                        if let Some(bn) = &mut l.bn {
                            out.push((format!("{p}.bn.mean"), &mut bn.mean));
                            out.push((format!("{p}.bn.var"), &mut bn.var));
                        }
                    }
                }
            }
        }
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors(Kind::Trainable).iter().map(|(_, m)| m.len()).sum()
    }

    /// Folds batch statistics reported by a training forward pass into the
    /// running averages. Stats are keyed by layer prefix (`sa1.0`, ...).
    pub fn update_running(&mut self, stats: &[(String, BatchStats)], momentum: f64) {
        let mut by_name: std::collections::HashMap<&str, &BatchStats> = std::collections::HashMap::new();
        for (n, s) in stats {
            by_name.insert(n.as_str(), s);
        }
        for (name, m) in self.modules_mut() {
            for (j, l) in m.layers.iter_mut().enumerate() {
                if let (Some(bn), Some(s)) = (&mut l.bn, by_name.get(format!("{name}.{j}").as_str())) {
                    bn.update(s, momentum);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tiny_network_fits_the_gradient_check_budget() {
        let w = Weights::init(&NetworkConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(0));
        assert!(w.parameter_count() <= 500, "{}", w.parameter_count());
        assert_eq!(w.vote.layers[0].in_width(), 6);
        assert_eq!(w.head.out_width(), OUTPUT_CHANNELS);
    }

    #[test]
    fn paper_voting_input_is_259_wide() {
        let w = Weights::init(&NetworkConfig::paper(), &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(w.vote.layers[0].in_width(), 259);
        assert_eq!(w.vote.out_width(), 259);
    }

    #[test]
    fn names_are_unique_and_stable() {
        let w = Weights::init(&NetworkConfig::tiny(), &mut ChaCha8Rng::seed_from_u64(0));
        let names: Vec<String> = w.tensors(Kind::Trainable).into_iter().map(|(n, _)| n).collect();
        let set: std::collections::BTreeSet<&String> = names.iter().collect();
        assert_eq!(set.len(), names.len());
        assert_eq!(names[0], "sa1.0.w");
        assert!(names.contains(&"head.2.b".to_string()));
    }

    #[test]
    fn running_update_uses_momentum() {
        let mut bn = BatchNorm::new(1);
        let stats = BatchStats {
            mean: ndarray::arr1(&[2.0]),
            var: ndarray::arr1(&[3.0]),
        };
        bn.update(&stats, 0.9);
        assert!((bn.mean[(0, 0)] - 0.2).abs() < 1e-15);
        assert!((bn.var[(0, 0)] - 1.2).abs() < 1e-15);
    }
}
