//! Label-consistent augmentation and fixed-size subsampling.
//!
//! Every transform moves the points and the label box together so that point
//! membership in the box is preserved. Randomness is always drawn from a
//! caller-supplied RNG.

use std::f64::consts::PI;

use nalgebra::Point3;
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::{points_in_box, wrap_angle, OrientedBox};

/// A cloud with its single-robot label. `label` is `None` for scenes without
/// the robot.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCloud {
    pub cloud_id: String,
    pub cloud: PointCloud,
    pub label: Option<OrientedBox>,
}

impl LabeledCloud {
    pub fn new(cloud_id: impl Into<String>, cloud: PointCloud, label: Option<OrientedBox>) -> Result<Self> {
        let lc = Self {
            cloud_id: cloud_id.into(),
            cloud,
            label,
        };
        if let Some(b) = &lc.label {
            if points_in_box(&lc.cloud, b).is_empty() {
                return Err(Error::Validation(format!("cloud {} has no point inside its label box", lc.cloud_id)));
            }
        }
        Ok(lc)
    }

    pub fn has_object(&self) -> bool {
        self.label.is_some()
    }

    fn map(&self, point: impl Fn(&Point3<f64>) -> Point3<f64>, label: impl Fn(&OrientedBox) -> OrientedBox) -> Self {
        Self {
            cloud_id: self.cloud_id.clone(),
            cloud: self.cloud.map_points(point),
            label: self.label.as_ref().map(label),
        }
    }
}

/// Mirror axis. Flipping "about x" negates y; flipping "about y" negates x.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    X,
    Y,
}

/// Multiplies every coordinate, the box center and the box size by `factor`.
pub fn random_scale(lc: &LabeledCloud, factor: f64) -> Result<LabeledCloud> {
    if !(factor > 0.0 && factor.is_finite()) {
        return Err(Error::Validation(format!("scale factor must be positive, got {factor}")));
    }
    if let Some(b) = &lc.label {
        b.scaled(factor)?;
    }
    Ok(lc.map(
        |p| Point3::from(p.coords * factor),
        |b| b.scaled(factor).expect("positive factor keeps the box valid"),
    ))
}

/// Mirror flip. About x: `(x, y, z) → (x, -y, z)`, `θ → -θ`.
/// About y: `(x, y, z) → (-x, y, z)`, `θ → π - θ`.
pub fn flip_axis(lc: &LabeledCloud, axis: Axis) -> LabeledCloud {
    match axis {
        Axis::X => lc.map(
            |p| Point3::new(p.x, -p.y, p.z),
            |b| {
                let c = b.center();
                b.with_center(Point3::new(c.x, -c.y, c.z)).with_yaw(-b.yaw())
            },
        ),
        Axis::Y => lc.map(
            |p| Point3::new(-p.x, p.y, p.z),
            |b| {
                let c = b.center();
                b.with_center(Point3::new(-c.x, c.y, c.z)).with_yaw(PI - b.yaw())
            },
        ),
    }
}

#[inline]
fn rotate_point(p: &Point3<f64>, s: f64, c: f64) -> Point3<f64> {
    Point3::new(c * p.x - s * p.y, s * p.x + c * p.y, p.z)
}

/// Rotates the scene about +z by `angle`.
pub fn rotate_z(lc: &LabeledCloud, angle: f64) -> Result<LabeledCloud> {
    if !angle.is_finite() {
        return Err(Error::Validation("rotation angle must be finite".into()));
    }
    let (s, c) = angle.sin_cos();
    Ok(lc.map(
        |p| rotate_point(p, s, c),
        |b| b.with_center(rotate_point(&b.center(), s, c)).with_yaw(wrap_angle(b.yaw() + angle)),
    ))
}

/// Exactly `n` points: uniform without replacement when the cloud is large
/// enough (in random order), with replacement otherwise.
pub fn subsample<R: Rng + ?Sized>(cloud: &PointCloud, n: usize, rng: &mut R) -> Result<PointCloud> {
    Ok(cloud.select(&subsample_indices(cloud.len(), n, rng)?))
}

pub fn subsample_indices<R: Rng + ?Sized>(len: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Validation("subsample size must be positive".into()));
    }
    if len == 0 {
        return Err(Error::Validation("cannot subsample an empty cloud".into()));
    }
    if len >= n {
        Ok(index::sample(rng, len, n).into_vec())
    } else {
        Ok((0..n).map(|_| rng.random_range(0..len)).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentConfig {
    pub flip_x: bool,
    pub flip_y: bool,
    pub rotate: bool,
    pub scale: bool,
    /// Closed range the scale factor is drawn from.
    pub scale_range: (f64, f64),
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            flip_x: true,
            flip_y: true,
            rotate: true,
            scale: true,
            scale_range: (0.85, 1.15),
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            flip_x: false,
            flip_y: false,
            rotate: false,
            scale: false,
            ..Self::default()
        }
    }
}

/// Random per-sample augmentation: each flip with probability 0.5, then a
/// rotation drawn from `[-π, π)`, then a scale drawn from `scale_range`.
pub fn augment<R: Rng + ?Sized>(lc: &LabeledCloud, cfg: &AugmentConfig, rng: &mut R) -> Result<LabeledCloud> {
    let mut out = lc.clone();
    if cfg.flip_x && rng.random_bool(0.5) {
        out = flip_axis(&out, Axis::X);
    }
    if cfg.flip_y && rng.random_bool(0.5) {
        out = flip_axis(&out, Axis::Y);
    }
    if cfg.rotate {
        out = rotate_z(&out, rng.random_range(-PI..PI))?;
    }
    if cfg.scale {
        let (lo, hi) = cfg.scale_range;
        if !(lo > 0.0 && lo <= hi) {
            return Err(Error::Validation(format!("invalid scale range [{lo}, {hi}]")));
        }
        out = random_scale(&out, rng.random_range(lo..=hi))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn scene() -> LabeledCloud {
        let cloud = PointCloud::from_xyz(&[[1.0, 2.0, 3.0], [0.5, 0.5, 0.2], [-1.0, 0.0, 0.1], [0.6, 0.4, 0.0]]).unwrap();
        let b = OrientedBox::new(Point3::new(0.5, 0.5, 0.2), Vector3::new(0.4, 0.3, 0.4), 0.3).unwrap();
        LabeledCloud::new("s", cloud, Some(b)).unwrap()
    }

    #[test]
    fn scale_identity_and_homothety() {
        let lc = scene();
        assert_eq!(random_scale(&lc, 1.0).unwrap(), lc);
        let s = random_scale(&lc, 2.0).unwrap();
        for (a, b) in lc.cloud.points().iter().zip(s.cloud.points()) {
            assert!((b.coords.norm() - 2.0 * a.coords.norm()).abs() < 1e-12);
        }
        let v0 = lc.label.unwrap().volume();
        assert!((s.label.unwrap().volume() - 8.0 * v0).abs() < 1e-12);
        assert!(random_scale(&lc, 0.0).is_err());
        assert!(random_scale(&lc, -1.0).is_err());
    }

    #[test]
    fn flip_y_rule() {
        let lc = scene();
        let f = flip_axis(&lc, Axis::Y);
        assert_eq!(f.cloud.points()[0], Point3::new(-1.0, 2.0, 3.0));
        assert!((f.label.unwrap().yaw() - (PI - 0.3)).abs() < 1e-12);
        let ff = flip_axis(&f, Axis::Y);
        assert!((ff.label.unwrap().yaw() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn rotate_quarter_turn() {
        let lc = LabeledCloud::new("r", PointCloud::from_xyz(&[[1.0, 0.0, 0.0]]).unwrap(), None).unwrap();
        let r = rotate_z(&lc, std::f64::consts::FRAC_PI_2).unwrap();
        assert!((r.cloud.points()[0] - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-15);
        assert_eq!(rotate_z(&lc, 0.0).unwrap(), lc);
    }

    #[test]
    fn subsample_contracts() {
        let cloud = PointCloud::new((0..40_000).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let s = subsample(&cloud, 25_000, &mut rng).unwrap();
        assert_eq!(s.len(), 25_000);
        let distinct: HashSet<u64> = s.points().iter().map(|p| p.x.to_bits()).collect();
        assert_eq!(distinct.len(), 25_000);

        let small = PointCloud::from_xyz(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]]).unwrap();
        let perm = subsample(&small, 3, &mut rng).unwrap();
        let mut xs: Vec<f64> = perm.points().iter().map(|p| p.x).collect();
        xs.sort_by(f64::total_cmp);
        assert_eq!(xs, vec![0.0, 1.0, 2.0]);

        assert_eq!(subsample(&small, 10, &mut rng).unwrap().len(), 10);
        let a = subsample(&cloud, 100, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = subsample(&cloud, 100, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        assert!(subsample(&PointCloud::empty(), 5, &mut rng).is_err());
        assert!(subsample(&small, 0, &mut rng).is_err());
    }

    #[test]
    fn label_must_cover_a_point() {
        let cloud = PointCloud::from_xyz(&[[5.0, 5.0, 5.0]]).unwrap();
        let b = OrientedBox::new(Point3::origin(), Vector3::new(1.0, 1.0, 1.0), 0.0).unwrap();
        assert!(LabeledCloud::new("x", cloud, Some(b)).is_err());
    }

    #[test]
    fn disabled_augmentation_is_identity() {
        let lc = scene();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        assert_eq!(augment(&lc, &AugmentConfig::disabled(), &mut rng).unwrap(), lc);
    }
}
