use std::path::Path;

use arcal_core::{OrientedBox, Point3, PointCloud};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Archive;
use crate::config::NetworkConfig;
use crate::decode::{decode_one, ProposalSet};
use crate::error::{Error, Result};
use crate::network::{forward, ForwardPass, Mode};
use crate::tape::Tape;
use crate::weights::{Kind, Weights};

/// Highest-scoring proposal of one cloud.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: OrientedBox,
    pub score: f64,
}

/// Network configuration, weights and the number of epochs trained.
#[derive(Debug, Clone, PartialEq)]
pub struct Detector {
    pub config: NetworkConfig,
    pub weights: Weights,
    pub epoch: usize,
}

impl Detector {
    /// Fresh weights drawn from the configuration's seed.
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let weights = Weights::init(&config, &mut ChaCha8Rng::seed_from_u64(config.seed));
        Ok(Self {
            config,
            weights,
            epoch: 0,
        })
    }

    pub fn anchor(&self) -> [f64; 3] {
        self.config.anchor
    }

    pub fn forward(&self, tape: &mut Tape, clouds: &[&[Point3<f64>]], mode: Mode) -> Result<ForwardPass> {
        forward(&self.config, &self.weights, tape, clouds, mode)
    }

    /// Proposals for one cloud at full resolution with running statistics.
    pub fn proposals(&self, cloud: &PointCloud) -> Result<ProposalSet> {
        if cloud.is_empty() {
            return Err(Error::Validation("cannot detect in an empty cloud".into()));
        }
        let mut tape = Tape::new(false);
        let fp = self.forward(&mut tape, &[cloud.points()], Mode::Eval)?;
        let centers = tape
            .value(fp.centers)
            .rows()
            .into_iter()
            .map(|r| Point3::new(r[0], r[1], r[2]))
            .collect();
        ProposalSet::new(centers, tape.value(fp.output).clone())
    }

    /// Runs the network and returns the best proposal; ties go to the lower
    /// proposal index.
    pub fn detect(&self, cloud: &PointCloud) -> Result<Detection> {
        let p = self.proposals(cloud)?;
        let mut best: Option<Detection> = None;
        for (c, r) in p.centers.iter().zip(p.raw.rows()) {
            let (bbox, score) = decode_one(c, r, self.anchor())?;
            if best.map_or(true, |b| score > b.score) {
                best = Some(Detection { bbox, score });
            }
        }
        best.ok_or_else(|| Error::Validation("network produced no proposals".into()))
    }

    pub fn to_archive(&self, meta: serde_json::Value) -> Archive {
        let mut tensors: Vec<_> = self
            .weights
            .tensors(Kind::Trainable)
            .into_iter()
            .map(|(n, m)| (n, m.clone()))
            .collect();
        tensors.extend(self.weights.tensors(Kind::Running).into_iter().map(|(n, m)| (n, m.clone())));
        Archive {
            config: self.config.clone(),
            epoch: self.epoch,
            tensors,
            meta,
        }
    }

    /// Rebuilds the model from an archive; tensors beyond the network's own
    /// (optimizer state, say) are ignored.
    pub fn from_archive(a: &Archive) -> Result<Self> {
        let mut d = Self::new(a.config.clone())?;
        for kind in [Kind::Trainable, Kind::Running] {
            for (name, m) in d.weights.tensors_mut(kind) {
                let src = a
                    .tensor(&name)
                    .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
                if src.dim() != m.dim() {
                    return Err(Error::Checkpoint(format!("tensor {name} has shape {:?}, expected {:?}", src.dim(), m.dim())));
                }
                m.assign(src);
            }
        }
        d.epoch = a.epoch;
        Ok(d)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_archive(serde_json::Value::Null).save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_archive(&Archive::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.0..0.8)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn detect_is_bit_reproducible() {
        let d = Detector::new(NetworkConfig::tiny().with_seed(3)).unwrap();
        let c = cloud(100, 1);
        let a = d.detect(&c).unwrap();
        let b = d.detect(&c).unwrap();
        assert_eq!(a.score.to_bits(), b.score.to_bits());
        assert_eq!(a.bbox, b.bbox);
        assert!(d.detect(&PointCloud::empty()).is_err());
    }

    #[test]
    fn tiny_inputs_are_padded() {
        let d = Detector::new(NetworkConfig::tiny()).unwrap();
        assert!(d.detect(&cloud(5, 2)).is_ok());
    }

    #[test]
    fn archive_round_trip_preserves_predictions() {
        let mut d = Detector::new(NetworkConfig::tiny().with_seed(9)).unwrap();
        d.epoch = 12;
        d.weights.sa[0].layers[0].bn.as_mut().unwrap().mean.fill(0.25);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.ckpt");
        d.save(&p).unwrap();
        let back = Detector::load(&p).unwrap();
        assert_eq!(back, d);
        let c = cloud(80, 4);
        assert_eq!(back.detect(&c).unwrap(), d.detect(&c).unwrap());
    }
}
