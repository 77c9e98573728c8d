use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One sample-group-pool layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaSpec {
    pub npoint: usize,
    pub radius: f64,
    pub nsample: usize,
    pub mlp: Vec<usize>,
}

/// Vote clustering and the proposal head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposalSpec {
    pub nclusters: usize,
    pub radius: f64,
    pub nsample: usize,
    /// Shared per-vote MLP before pooling.
    pub mlp: Vec<usize>,
    /// Hidden widths of the head; the output layer of `OUTPUT_CHANNELS` is appended.
    pub head: Vec<usize>,
}

/// Channels per proposal: center offset (3), heading logit, heading
/// residual, size residual (3), class logit.
pub const OUTPUT_CHANNELS: usize = 9;

/// Column ranges in the proposal output.
pub mod channel {
    pub const CENTER: std::ops::Range<usize> = 0..3;
    pub const HEADING_LOGIT: usize = 3;
    pub const HEADING_RESIDUAL: usize = 4;
    pub const SIZE: std::ops::Range<usize> = 5..8;
    pub const CLASS: usize = 8;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub sa: Vec<SaSpec>,
    /// MLP widths of the two propagation layers, coarse to fine.
    pub fp: Vec<Vec<usize>>,
    pub proposal: ProposalSpec,
    /// Reference box size (l, w, h) the size residuals are relative to.
    pub anchor: [f64; 3],
    pub bn_momentum: f64,
    pub bn_eps: f64,
    /// Weight initialization seed.
    pub seed: u64,
}

/// Cardinalities every forward pass must produce.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shapes {
    pub seeds: usize,
    pub seed_width: usize,
    pub voting_input_width: usize,
    pub votes: (usize, usize),
    pub vote_features: (usize, usize),
    pub proposals: usize,
    pub group_size: usize,
    pub channels: usize,
}

fn sa(npoint: usize, radius: f64, nsample: usize, mlp: &[usize]) -> SaSpec {
    SaSpec {
        npoint,
        radius,
        nsample,
        mlp: mlp.to_vec(),
    }
}

impl NetworkConfig {
    /// Full-size architecture: 1024 seeds with 256-wide features and 256
    /// proposals grouped from 64 votes each.
    pub fn paper() -> Self {
        Self {
            sa: vec![
                sa(2048, 0.2, 64, &[64, 64, 128]),
                sa(1024, 0.4, 32, &[128, 128, 256]),
                sa(512, 0.8, 16, &[128, 128, 256]),
                sa(256, 1.2, 16, &[128, 128, 256]),
            ],
            fp: vec![vec![256, 256], vec![256, 256]],
            proposal: ProposalSpec {
                nclusters: 256,
                radius: 0.3,
                nsample: 64,
                mlp: vec![128, 128, 128],
                head: vec![128, 128],
            },
            anchor: [0.5, 0.4, 0.3],
            bn_momentum: 0.9,
            bn_eps: 1e-5,
            seed: 0,
        }
    }

    /// Desk-scale variant for CPU training on a few thousand points per scene.
    pub fn reduced() -> Self {
        Self {
            sa: vec![
                sa(512, 0.15, 16, &[64, 64, 128]),
                sa(256, 0.3, 16, &[128, 128, 128]),
                sa(64, 0.6, 16, &[128, 128, 128]),
                sa(32, 1.2, 16, &[128, 128, 128]),
            ],
            fp: vec![vec![128, 128], vec![128, 128]],
            proposal: ProposalSpec {
                nclusters: 128,
                radius: 0.3,
                nsample: 16,
                mlp: vec![128, 128],
                head: vec![128, 128],
            },
            ..Self::paper()
        }
    }

    /// A few hundred parameters, for gradient checks.
    pub fn tiny() -> Self {
        Self {
            sa: vec![
                sa(32, 0.5, 8, &[3]),
                sa(16, 0.8, 8, &[3]),
                sa(8, 1.2, 4, &[3]),
                sa(4, 2.0, 4, &[3]),
            ],
            fp: vec![vec![3], vec![3]],
            proposal: ProposalSpec {
                nclusters: 8,
                radius: 0.6,
                nsample: 4,
                mlp: vec![3],
                head: vec![3, 3],
            },
            ..Self::paper()
        }
    }

    pub fn with_anchor(mut self, anchor: [f64; 3]) -> Self {
        self.anchor = anchor;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Width of the seed features, i.e. the last propagation layer output.
    pub fn seed_width(&self) -> usize {
        *self.fp.last().and_then(|f| f.last()).expect("validated config")
    }

    pub fn shapes(&self) -> Shapes {
        let f = self.seed_width();
        let seeds = self.sa[1].npoint;
        Shapes {
            seeds,
            seed_width: f,
            voting_input_width: 3 + f,
            votes: (seeds, 3),
            vote_features: (seeds, f),
            proposals: self.proposal.nclusters,
            group_size: self.proposal.nsample,
            channels: OUTPUT_CHANNELS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.sa.len() != 4 {
            return bad(format!("expected 4 set-abstraction layers, got {}", self.sa.len()));
        }
        if self.fp.len() != 2 {
            return bad(format!("expected 2 propagation layers, got {}", self.fp.len()));
        }
        for (i, s) in self.sa.iter().enumerate() {
            if s.npoint == 0 || s.nsample == 0 || s.mlp.is_empty() || s.mlp.contains(&0) {
                return bad(format!("set-abstraction layer {} has an empty dimension", i + 1));
            }
            if !(s.radius > 0.0 && s.radius.is_finite()) {
                return bad(format!("set-abstraction layer {} radius must be positive", i + 1));
            }
        }
        for w in self.sa.windows(2) {
            if w[1].npoint > w[0].npoint {
                return bad("set-abstraction sample counts must not increase".into());
            }
        }
        if self.fp.iter().any(|f| f.is_empty() || f.contains(&0)) {
            return bad("propagation layer with an empty width".into());
        }
        let p = &self.proposal;
        if p.nclusters == 0 || p.nsample == 0 || p.mlp.is_empty() || p.mlp.contains(&0) || p.head.contains(&0) {
            return bad("proposal module has an empty dimension".into());
        }
        if !(p.radius > 0.0 && p.radius.is_finite()) {
            return bad("proposal radius must be positive".into());
        }
        if p.nclusters > self.sa[1].npoint {
            return bad("more proposal clusters than seeds".into());
        }
        if self.anchor.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return bad(format!("anchor components must be positive, got {:?}", self.anchor));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || !(self.bn_eps > 0.0) {
            return bad("batch-norm momentum must be in [0, 1) and eps positive".into());
        }
        Ok(())
    }
}
