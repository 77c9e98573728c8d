//! Point clouds and depth-frame unprojection.
//!
//! A depth frame stores, for every pixel, the ray distance `D` from the
//! sensor together with the pixel's coordinates `(u, v)` on the camera unit
//! plane (`z = 1`). Unprojection scales the unit-plane ray `(u, v, 1)` so that
//! its Euclidean length equals `D`:
//!
//! ```text
//! Z = D / sqrt(u^2 + v^2 + 1),  X = u * Z,  Y = v * Z
//! ```
//!
//! so every emitted point has norm `D` and lies on the pixel's ray.

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Unordered set of 3D points in meters with optional per-point features of a
/// uniform width.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
    feature_width: usize,
    features: Vec<f64>,
}

impl PointCloud {
    /// Builds a cloud without features. Fails on non-finite coordinates.
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self> {
        check_finite(&points)?;
        Ok(Self {
            points,
            feature_width: 0,
            features: Vec::new(),
        })
    }

    /// Builds a cloud with `width` features per point stored row-major.
    pub fn with_features(points: Vec<Point3<f64>>, width: usize, features: Vec<f64>) -> Result<Self> {
        check_finite(&points)?;
        if features.len() != points.len() * width {
            return Err(Error::Structural(format!(
                "feature buffer holds {} values, expected {} points x {} features",
                features.len(),
                points.len(),
                width
            )));
        }
        if features.iter().any(|f| !f.is_finite()) {
            return Err(Error::Structural("non-finite feature value".into()));
        }
        Ok(Self {
            points,
            feature_width: width,
            features,
        })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn from_xyz(xyz: &[[f64; 3]]) -> Result<Self> {
        Self::new(xyz.iter().map(|p| Point3::new(p[0], p[1], p[2])).collect())
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn feature_width(&self) -> usize {
        self.feature_width
    }

    /// Feature slice of point `i`; empty when the cloud carries no features.
    pub fn features_of(&self, i: usize) -> &[f64] {
        let w = self.feature_width;
        &self.features[i * w..(i + 1) * w]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// New cloud made of the given point indices, in the given order.
    /// Indices may repeat.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let w = self.feature_width;
        let mut features = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            features.extend_from_slice(self.features_of(i));
        }
        PointCloud {
            points,
            feature_width: w,
            features,
        }
    }

    /// Applies `f` to every point, keeping features untouched.
    pub fn map_points(&self, f: impl Fn(&Point3<f64>) -> Point3<f64>) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(f).collect(),
            feature_width: self.feature_width,
            features: self.features.clone(),
        }
    }

    /// Appends all points of `other`. Feature widths must agree.
    pub fn extend(&mut self, other: &PointCloud) -> Result<()> {
        if !self.is_empty() && self.feature_width != other.feature_width {
            return Err(Error::Structural(format!(
                "cannot merge clouds with feature widths {} and {}",
                self.feature_width, other.feature_width
            )));
        }
        if self.is_empty() {
            self.feature_width = other.feature_width;
        }
        self.points.extend_from_slice(&other.points);
        self.features.extend_from_slice(&other.features);
        Ok(())
    }

    /// Row-major `[x, y, z]` triples.
    pub fn to_xyz(&self) -> Vec<[f64; 3]> {
        self.points.iter().map(|p| [p.x, p.y, p.z]).collect()
    }
}

fn check_finite(points: &[Point3<f64>]) -> Result<()> {
    match points.iter().position(|p| !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite())) {
        Some(i) => Err(Error::Structural(format!("point {i} has a non-finite coordinate"))),
        None => Ok(()),
    }
}

/// Closed interval of accepted ray distances, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeGate {
    pub min: f64,
    pub max: f64,
}

impl Default for RangeGate {
    /// Long-throw depth sensor range: 0.4 m to 4 m.
    fn default() -> Self {
        Self { min: 0.4, max: 4.0 }
    }
}

impl RangeGate {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || min >= max {
            return Err(Error::Validation(format!(
                "range gate needs min < max, got [{min}, {max}]"
            )));
        }
        Ok(Self { min, max })
    }

    #[inline]
    pub fn contains(&self, distance: f64) -> bool {
        distance >= self.min && distance <= self.max
    }
}

/// Pinhole intrinsics used to synthesize unit-plane coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PinholeIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl PinholeIntrinsics {
    /// Unit-plane coordinates of pixel `(px, py)`.
    #[inline]
    pub fn unit_plane(&self, px: f64, py: f64) -> [f64; 2] {
        [(px - self.cx) / self.fx, (py - self.cy) / self.fy]
    }
}

/// One depth image: per-pixel ray distance `D` (0 marks an invalid pixel) and
/// per-pixel unit-plane coordinates, both row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    width: usize,
    height: usize,
    depth: Vec<f64>,
    unit_plane: Vec<[f64; 2]>,
}

impl DepthFrame {
    pub fn new(width: usize, height: usize, depth: Vec<f64>, unit_plane: Vec<[f64; 2]>) -> Result<Self> {
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Error::Structural("frame dimensions overflow".into()))?;
        if depth.len() != n {
            return Err(Error::Structural(format!(
                "depth buffer has {} entries for a {width}x{height} frame",
                depth.len()
            )));
        }
        if unit_plane.len() != n {
            return Err(Error::Structural(format!(
                "unit-plane table has {} entries for a {width}x{height} frame",
                unit_plane.len()
            )));
        }
        if let Some(i) = depth.iter().position(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err(Error::Structural(format!("pixel {i} has invalid depth {}", depth[i])));
        }
        if let Some(i) = unit_plane.iter().position(|uv| !(uv[0].is_finite() && uv[1].is_finite())) {
            return Err(Error::Structural(format!("pixel {i} has non-finite unit-plane coordinates")));
        }
        Ok(Self {
            width,
            height,
            depth,
            unit_plane,
        })
    }

    /// Frame whose unit-plane table comes from pinhole intrinsics.
    pub fn from_pinhole(width: usize, height: usize, depth: Vec<f64>, k: &PinholeIntrinsics) -> Result<Self> {
        let unit_plane = (0..height)
            .flat_map(|py| (0..width).map(move |px| (px, py)))
            .map(|(px, py)| k.unit_plane(px as f64, py as f64))
            .collect();
        Self::new(width, height, depth, unit_plane)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn depth(&self) -> &[f64] {
        &self.depth
    }

    pub fn unit_plane(&self) -> &[[f64; 2]] {
        &self.unit_plane
    }
}

/// Unprojects a single pixel ray of length `depth`.
#[inline]
pub fn unproject(u: f64, v: f64, depth: f64) -> Point3<f64> {
    let z = depth / (u * u + v * v + 1.0).sqrt();
    Point3::new(u * z, v * z, z)
}

/// Converts every in-range pixel of `frame` to a 3D point, row-major.
///
/// The range gate is applied to the ray distance `D`, which equals the norm of
/// the emitted point. Invalid pixels (depth 0) always fall below the gate.
pub fn depth_to_cloud(frame: &DepthFrame, gate: RangeGate) -> Result<PointCloud> {
    let gate = RangeGate::new(gate.min, gate.max)?;
    let points = frame
        .depth
        .iter()
        .zip(&frame.unit_plane)
        .filter(|(d, _)| gate.contains(**d))
        .map(|(&d, uv)| unproject(uv[0], uv[1], d))
        .collect();
    PointCloud::new(points)
}

/// Keeps the points whose Euclidean norm lies in the closed gate interval.
pub fn filter_range(cloud: &PointCloud, gate: RangeGate) -> Result<PointCloud> {
    let gate = RangeGate::new(gate.min, gate.max)?;
    let keep: Vec<usize> = cloud
        .points()
        .iter()
        .enumerate()
        .filter(|(_, p)| gate.contains(p.coords.norm()))
        .map(|(i, _)| i)
        .collect();
    Ok(cloud.select(&keep))
}
