//! Oriented boxes and the geometry behind the labeling tool.

mod annotate;
mod iou;

pub use annotate::{base_plane, box_from_corners, fourth_corner, CornerTriple, Plane, DEFAULT_HEIGHT_THRESHOLD, ORTHOGONALITY_TOLERANCE_DEG};
pub use iou::{box_iou, convex_clip, polygon_area};

use std::f64::consts::{PI, TAU};

use nalgebra::{Point3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Wraps an angle to `[-π, π)`.
#[inline]
pub fn wrap_angle(a: f64) -> f64 {
    let w = a - TAU * ((a + PI) / TAU).floor();
    // floor() can land exactly on π after rounding
    if w >= PI {
        w - TAU
    } else {
        w
    }
}

/// Absolute angular distance between two headings, treating a rectangle and
/// its 180°-rotated copy as the same (result in `[0, π/2]`).
pub fn yaw_error_mod_pi(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b).abs();
    d.min(PI - d)
}

/// Box with a vertical axis: center, size `(length, width, height)` and yaw
/// about +z. Length runs along the heading direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrientedBox {
    center: Point3<f64>,
    size: Vector3<f64>,
    yaw: f64,
}

impl OrientedBox {
    pub fn new(center: Point3<f64>, size: Vector3<f64>, yaw: f64) -> Result<Self> {
        if !center.iter().chain(size.iter()).all(|v| v.is_finite()) || !yaw.is_finite() {
            return Err(Error::Validation("box has a non-finite component".into()));
        }
        if size.iter().any(|&s| s <= 0.0) {
            return Err(Error::Validation(format!(
                "box size components must be positive, got ({}, {}, {})",
                size.x, size.y, size.z
            )));
        }
        Ok(Self {
            center,
            size,
            yaw: wrap_angle(yaw),
        })
    }

    pub fn center(&self) -> Point3<f64> {
        self.center
    }

    pub fn size(&self) -> Vector3<f64> {
        self.size
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn volume(&self) -> f64 {
        self.size.x * self.size.y * self.size.z
    }

    /// Coordinates of `p` in the box frame (origin at center, x along heading).
    #[inline]
    pub fn to_local(&self, p: &Point3<f64>) -> Vector3<f64> {
        let d = p - self.center;
        let (s, c) = self.yaw.sin_cos();
        Vector3::new(c * d.x + s * d.y, -s * d.x + c * d.y, d.z)
    }

    /// Closed-volume membership test.
    #[inline]
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let l = self.to_local(p);
        let h = self.size * 0.5;
        l.x.abs() <= h.x && l.y.abs() <= h.y && l.z.abs() <= h.z
    }

    /// Base-rectangle corners in the horizontal plane, counterclockwise.
    pub fn footprint(&self) -> [Vector2<f64>; 4] {
        let (s, c) = self.yaw.sin_cos();
        let hx = self.size.x * 0.5;
        let hy = self.size.y * 0.5;
        let ctr = Vector2::new(self.center.x, self.center.y);
        let rot = |x: f64, y: f64| ctr + Vector2::new(c * x - s * y, s * x + c * y);
        [rot(-hx, -hy), rot(hx, -hy), rot(hx, hy), rot(-hx, hy)]
    }

    /// The eight corners, bottom face first.
    pub fn corners(&self) -> [Point3<f64>; 8] {
        let fp = self.footprint();
        let z0 = self.center.z - self.size.z * 0.5;
        let z1 = self.center.z + self.size.z * 0.5;
        let mut out = [Point3::origin(); 8];
        for (i, c) in fp.iter().enumerate() {
            out[i] = Point3::new(c.x, c.y, z0);
            out[i + 4] = Point3::new(c.x, c.y, z1);
        }
        out
    }

    /// Same box with every coordinate and extent multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::new(Point3::from(self.center.coords * factor), self.size * factor, self.yaw)
    }

    pub fn with_center(&self, center: Point3<f64>) -> Self {
        Self { center, ..*self }
    }

    pub fn with_yaw(&self, yaw: f64) -> Self {
        Self {
            yaw: wrap_angle(yaw),
            ..*self
        }
    }
}

/// Indices of the cloud points inside the closed box volume.
pub fn points_in_box(cloud: &PointCloud, b: &OrientedBox) -> Vec<usize> {
    cloud
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| b.contains(p))
        .map(|(i, _)| i)
        .collect()
}

#[derive(Serialize, Deserialize)]
struct BoxJson {
    center: [f64; 3],
    size: [f64; 3],
    yaw: f64,
}

impl Serialize for OrientedBox {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        BoxJson {
            center: [self.center.x, self.center.y, self.center.z],
            size: [self.size.x, self.size.y, self.size.z],
            yaw: self.yaw,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for OrientedBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = BoxJson::deserialize(d)?;
        OrientedBox::new(Point3::from(j.center), Vector3::from(j.size), j.yaw).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn unit_box() -> OrientedBox {
        OrientedBox::new(Point3::new(1.0, 2.0, 3.0), Vector3::new(2.0, 1.0, 0.5), 0.0).unwrap()
    }

    #[test]
    fn wrap_range() {
        assert_eq!(wrap_angle(PI), -PI);
        assert_eq!(wrap_angle(-PI), -PI);
        assert!((wrap_angle(3.0 * PI + 0.1) - (-PI + 0.1)).abs() < 1e-12);
        assert!((wrap_angle(-0.3) + 0.3).abs() < 1e-15);
        for k in -20..20 {
            let w = wrap_angle(k as f64 * 0.77);
            assert!((-PI..PI).contains(&w));
        }
    }

    #[test]
    fn size_must_be_positive() {
        assert!(OrientedBox::new(Point3::origin(), Vector3::new(1.0, 0.0, 1.0), 0.0).is_err());
        assert!(OrientedBox::new(Point3::origin(), Vector3::new(1.0, 1.0, 1.0), f64::NAN).is_err());
    }

    #[test]
    fn center_inside_and_face_boundary() {
        let b = unit_box();
        assert!(b.contains(&b.center()));
        assert!(b.contains(&Point3::new(2.0, 2.0, 3.0)));
        assert!(!b.contains(&Point3::new(2.0 + 1e-6, 2.0, 3.0)));
        assert!(!b.contains(&Point3::new(1.0, 2.0, 3.25 + 1e-6)));
    }

    #[test]
    fn rotated_half_extent() {
        let b = OrientedBox::new(Point3::new(0.5, -0.5, 0.0), Vector3::new(2.0, 1.0, 1.0), FRAC_PI_4).unwrap();
        let (s, c) = FRAC_PI_4.sin_cos();
        // local (1, 0.5, 0.5) scaled by 0.99, rotated into the world
        let (lx, ly, lz) = (0.99, 0.495, 0.495);
        let p = Point3::new(0.5 + c * lx - s * ly, -0.5 + s * lx + c * ly, lz);
        assert!(b.contains(&p));
        let far = Point3::new(0.5 + 1.01, -0.5, 0.0);
        assert!(!b.contains(&far));
    }

    #[test]
    fn yaw_mod_pi() {
        assert!((yaw_error_mod_pi(0.1, 0.1 + PI)).abs() < 1e-12);
        assert!((yaw_error_mod_pi(0.0, 0.3) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn json_roundtrip_validates() {
        let b = unit_box();
        let v = serde_json::to_value(b).unwrap();
        assert_eq!(serde_json::from_value::<OrientedBox>(v).unwrap(), b);
        let bad = serde_json::json!({"center": [0,0,0], "size": [1,-1,1], "yaw": 0});
        assert!(serde_json::from_value::<OrientedBox>(bad).is_err());
    }
}
