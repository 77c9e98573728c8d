use arcal_core::{wrap_angle, OrientedBox, Point3, Vector3};

use crate::config::{channel, OUTPUT_CHANNELS};
use crate::error::{Error, Result};
use crate::tape::Mat;

/// Smallest box edge a decoded prediction may have, meters.
pub const MIN_SIZE: f64 = 0.01;

/// Decoded-ready proposal output of one cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposalSet {
    pub centers: Vec<Point3<f64>>,
    /// `P × 9` raw channels; see [`channel`].
    pub raw: Mat,
}

impl ProposalSet {
    pub fn new(centers: Vec<Point3<f64>>, raw: Mat) -> Result<Self> {
        if raw.ncols() != OUTPUT_CHANNELS || raw.nrows() != centers.len() {
            return Err(Error::Shape {
                what: "proposal set",
                expected: format!("({}, {OUTPUT_CHANNELS})", centers.len()),
                got: format!("{:?}", raw.dim()),
            });
        }
        Ok(Self { centers, raw })
    }

    pub fn len(&self) -> usize {
        self.centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.centers.is_empty()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_anchor(anchor: [f64; 3]) -> Result<()> {
    if anchor.iter().all(|a| *a > 0.0 && a.is_finite()) {
        Ok(())
    } else {
        Err(Error::Validation(format!("anchor components must be positive, got {anchor:?}")))
    }
}

/// Box for proposal `i`: center = cluster center + offset, size = anchor +
/// residual (each edge at least [`MIN_SIZE`]), yaw = wrapped residual
/// against the single heading class at 0, score = logistic of the class
/// channel.
pub fn decode_one(center: &Point3<f64>, raw: ndarray::ArrayView1<f64>, anchor: [f64; 3]) -> Result<(OrientedBox, f64)> {
    let c = center + Vector3::new(raw[channel::CENTER.start], raw[channel::CENTER.start + 1], raw[channel::CENTER.start + 2]);
    let s = channel::SIZE.start;
    let size = Vector3::new(
        (anchor[0] + raw[s]).max(MIN_SIZE),
        (anchor[1] + raw[s + 1]).max(MIN_SIZE),
        (anchor[2] + raw[s + 2]).max(MIN_SIZE),
    );
    let b = OrientedBox::new(c, size, wrap_angle(raw[channel::HEADING_RESIDUAL]))?;
    Ok((b, sigmoid(raw[channel::CLASS])))
}

pub fn decode(p: &ProposalSet, anchor: [f64; 3]) -> Result<Vec<(OrientedBox, f64)>> {
    check_anchor(anchor)?;
    p.centers
        .iter()
        .zip(p.raw.rows())
        .map(|(c, r)| decode_one(c, r, anchor))
        .collect()
}

/// Raw channels that decode back to `b` from `center`, with a class logit
/// of 0 and a heading logit of 0.
pub fn encode(b: &OrientedBox, center: &Point3<f64>, anchor: [f64; 3]) -> Result<[f64; OUTPUT_CHANNELS]> {
    check_anchor(anchor)?;
    let mut out = [0.0; OUTPUT_CHANNELS];
    let d = b.center() - center;
    out[0] = d.x;
    out[1] = d.y;
    out[2] = d.z;
    out[channel::HEADING_RESIDUAL] = b.yaw();
    for k in 0..3 {
        out[channel::SIZE.start + k] = b.size()[k] - anchor[k];
    }
    Ok(out)
}
