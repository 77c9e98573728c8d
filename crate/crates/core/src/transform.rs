//! Rigid transforms and the AR-to-map calibration chain.
//!
//! A [`RigidTransform`] `T_A->B` maps coordinates expressed in frame `A` into
//! frame `B`: `x_B = R x_A + t`. Composition follows function composition,
//! `compose(a, b)(x) = a(b(x))`.
//!
//! The calibration chain links three frames: the AR headset, the robot and
//! the robot's map. The map pose of the robot is known from its SLAM stack,
//! the AR pose of the robot comes from the detector, and
//!
//! ```text
//! T_AR->Map = T_Robot->Map * inverse(T_Robot->AR)
//! ```

use nalgebra::{Matrix3, Point3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::geometry::OrientedBox;

/// Tolerance on `R Rᵀ = I` and `det R = 1`.
pub const ORTHONORMAL_TOL: f64 = 1e-9;

/// Proper rigid motion: orthonormal rotation with determinant +1 plus a
/// translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl Default for RigidTransform {
    fn default() -> Self {
        Self::identity()
    }
}

impl RigidTransform {
    /// Validates the rotation and builds the transform.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        if rotation.iter().chain(translation.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidTransform("non-finite entry".into()));
        }
        let ortho_err = (rotation * rotation.transpose() - Matrix3::identity()).abs().max();
        if ortho_err > ORTHONORMAL_TOL {
            return Err(Error::InvalidTransform(format!(
                "rotation is not orthonormal (max |R Rᵀ - I| = {ortho_err:e})"
            )));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ORTHONORMAL_TOL {
            return Err(Error::InvalidTransform(format!("rotation determinant is {det}, expected +1")));
        }
        Ok(Self { rotation, translation })
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_rotation(r: Rotation3<f64>, t: Vector3<f64>) -> Self {
        Self {
            rotation: *r.matrix(),
            translation: t,
        }
    }

    /// Rotation by `yaw` about +z followed by translation `t`.
    pub fn from_yaw(yaw: f64, t: Vector3<f64>) -> Self {
        Self::from_rotation(Rotation3::from_axis_angle(&Vector3::z_axis(), yaw), t)
    }

    /// Lifts a detected box to the robot's pose in the sensor frame: yaw about
    /// +z, zero roll and pitch, translation at the box center.
    pub fn from_box(b: &OrientedBox) -> Self {
        Self::from_yaw(b.yaw(), b.center().coords)
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Heading of the rotated +x axis in the horizontal plane.
    pub fn yaw(&self) -> f64 {
        self.rotation[(1, 0)].atan2(self.rotation[(0, 0)])
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    #[inline]
    pub fn apply_point(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.rotation * p.coords + self.translation)
    }

    #[inline]
    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        cloud.map_points(|p| self.apply_point(p))
    }

    /// Largest absolute entry-wise difference of rotation and translation.
    pub fn max_abs_diff(&self, other: &RigidTransform) -> f64 {
        let r = (self.rotation - other.rotation).abs().max();
        let t = (self.translation - other.translation).abs().max();
        r.max(t)
    }
}

/// `T_AR->Map` from the robot's pose in the map and its pose in the AR frame.
pub fn calibrate_ar_to_map(robot_in_map: &RigidTransform, robot_in_ar: &RigidTransform) -> RigidTransform {
    robot_in_map.compose(&robot_in_ar.inverse())
}

/// Row-major transform JSON: `{"rotation": [[..],[..],[..]], "translation": [x,y,z]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformJson {
    pub rotation: [[f64; 3]; 3],
    pub translation: [f64; 3],
}

impl From<&RigidTransform> for TransformJson {
    fn from(t: &RigidTransform) -> Self {
        let r = &t.rotation;
        TransformJson {
            rotation: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            translation: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl TryFrom<TransformJson> for RigidTransform {
    type Error = Error;

    fn try_from(j: TransformJson) -> Result<Self> {
        let r = Matrix3::from_fn(|i, k| j.rotation[i][k]);
        RigidTransform::new(r, Vector3::from(j.translation))
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TransformJson::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = TransformJson::deserialize(d)?;
        RigidTransform::try_from(j).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn compose_with_inverse_is_identity() {
        let t = RigidTransform::from_rotation(
            Rotation3::from_euler_angles(0.3, -0.7, 2.1),
            Vector3::new(1.0, -2.0, 0.5),
        );
        assert!(t.compose(&t.inverse()).max_abs_diff(&RigidTransform::identity()) < 1e-9);
        assert!(t.inverse().compose(&t).max_abs_diff(&RigidTransform::identity()) < 1e-9);
    }

    #[test]
    fn translation_moves_origin() {
        let t = RigidTransform::from_translation(Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(t.apply_point(&Point3::origin()), Point3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn quarter_turn_about_z() {
        let t = RigidTransform::from_yaw(FRAC_PI_2, Vector3::zeros());
        let p = t.apply_point(&Point3::new(1.0, 0.0, 0.0));
        assert!((p - Point3::new(0.0, 1.0, 0.0)).norm() < 1e-12);
        assert!((t.yaw() - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn rejects_non_orthonormal() {
        let mut r = Matrix3::identity();
        r[(0, 0)] = 1.001;
        assert!(matches!(RigidTransform::new(r, Vector3::zeros()), Err(Error::InvalidTransform(_))));
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(reflection, Vector3::zeros()).is_err());
    }

    #[test]
    fn calibration_examples() {
        let id = RigidTransform::identity();
        assert_eq!(calibrate_ar_to_map(&id, &id), id);
        let map = RigidTransform::from_translation(Vector3::new(5.0, 0.0, 0.0));
        let got = calibrate_ar_to_map(&map, &id);
        assert!(got.max_abs_diff(&map) < 1e-15);
    }

    #[test]
    fn json_shape_and_validation() {
        let t = RigidTransform::from_yaw(0.5, Vector3::new(1.0, 2.0, 3.0));
        let v = serde_json::to_value(t).unwrap();
        assert_eq!(v["translation"], serde_json::json!([1.0, 2.0, 3.0]));
        assert_eq!(v["rotation"].as_array().unwrap().len(), 3);
        let back: RigidTransform = serde_json::from_value(v).unwrap();
        assert!(back.max_abs_diff(&t) < 1e-15);

        let bad = serde_json::json!({"rotation": [[2,0,0],[0,1,0],[0,0,1]], "translation": [0,0,0]});
        assert!(serde_json::from_value::<RigidTransform>(bad).is_err());
    }
}
