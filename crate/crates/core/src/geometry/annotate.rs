//! Three-corner box annotation.
//!
//! The annotator picks three corners `a`, `b`, `c` of the robot's base
//! rectangle, `b` being the corner shared by the two picked edges `b→a` and
//! `b→c`. From these the engine completes the fourth corner, fits the base
//! plane, collects the cloud points whose projection onto the plane falls
//! inside the rectangle, and takes the highest of them (below a cut-off
//! threshold) as the box height. The box center sits on the plane normal
//! through the rectangle center at half that height.

use nalgebra::{Point3, Vector3};

use super::OrientedBox;
use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Allowed deviation of the picked corner angle from 90°.
pub const ORTHOGONALITY_TOLERANCE_DEG: f64 = 15.0;

pub const DEFAULT_HEIGHT_THRESHOLD: f64 = 1.0;

const DEGENERATE_EPS: f64 = 1e-9;

/// Three base corners; `b` is the shared corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CornerTriple {
    pub a: Point3<f64>,
    pub b: Point3<f64>,
    pub c: Point3<f64>,
}

/// Plane `normal · x = offset` with a unit normal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vector3<f64>,
    pub offset: f64,
}

impl Plane {
    #[inline]
    pub fn signed_distance(&self, p: &Point3<f64>) -> f64 {
        self.normal.dot(&p.coords) - self.offset
    }

    fn flipped(self) -> Self {
        Plane {
            normal: -self.normal,
            offset: -self.offset,
        }
    }
}

/// Orthonormal rectangle frame derived from a corner triple.
struct BaseFrame {
    origin: Point3<f64>,
    u1: Vector3<f64>,
    u2: Vector3<f64>,
    length: f64,
    width: f64,
}

impl CornerTriple {
    pub fn new(a: Point3<f64>, b: Point3<f64>, c: Point3<f64>) -> Self {
        Self { a, b, c }
    }

    /// Checks distinctness, collinearity and the angle tolerance, then builds
    /// the rectangle frame with `b→c` re-orthogonalized against `b→a`.
    fn frame(&self) -> Result<BaseFrame> {
        let pts = [self.a, self.b, self.c];
        if pts.iter().any(|p| !p.iter().all(|v| v.is_finite())) {
            return Err(Error::DegenerateCorners("non-finite corner".into()));
        }
        let e1 = self.a - self.b;
        let e2 = self.c - self.b;
        let (n1, n2) = (e1.norm(), e2.norm());
        if n1 < DEGENERATE_EPS || n2 < DEGENERATE_EPS || (self.a - self.c).norm() < DEGENERATE_EPS {
            return Err(Error::DegenerateCorners("corners are not pairwise distinct".into()));
        }
        let sin = e1.cross(&e2).norm() / (n1 * n2);
        if sin < DEGENERATE_EPS {
            return Err(Error::DegenerateCorners("corners are collinear".into()));
        }
        let cos = e1.dot(&e2) / (n1 * n2);
        let angle_deg = cos.clamp(-1.0, 1.0).acos().to_degrees();
        if (angle_deg - 90.0).abs() > ORTHOGONALITY_TOLERANCE_DEG {
            return Err(Error::NotOrthogonal {
                angle_deg,
                tolerance_deg: ORTHOGONALITY_TOLERANCE_DEG,
            });
        }
        let u1 = e1 / n1;
        let e2o = e2 - u1 * e2.dot(&u1);
        let width = e2o.norm();
        Ok(BaseFrame {
            origin: self.b,
            u1,
            u2: e2o / width,
            length: n1,
            width,
        })
    }
}

/// Parallelogram completion `a + c' - b`, where `c'` is `c` after the `b→c`
/// edge is made orthogonal to `b→a` (equal to `a + c - b` for exact right
/// angles).
pub fn fourth_corner(t: &CornerTriple) -> Result<Point3<f64>> {
    let f = t.frame()?;
    Ok(f.origin + f.u1 * f.length + f.u2 * f.width)
}

/// Plane through the three corners. Without a cloud to decide, the normal is
/// oriented toward +z (ties broken toward +y, then +x).
pub fn base_plane(t: &CornerTriple) -> Result<Plane> {
    let e1 = t.a - t.b;
    let e2 = t.c - t.b;
    let n = e1.cross(&e2);
    let len = n.norm();
    if len < DEGENERATE_EPS * e1.norm() * e2.norm() || len == 0.0 {
        return Err(Error::DegenerateCorners("corners are collinear".into()));
    }
    let mut normal = n / len;
    let key = [normal.z, normal.y, normal.x]
        .into_iter()
        .find(|v| v.abs() > 1e-12)
        .unwrap_or(1.0);
    if key < 0.0 {
        normal = -normal;
    }
    Ok(Plane {
        normal,
        offset: normal.dot(&t.b.coords),
    })
}

/// Completes the box from three picked base corners.
///
/// Points whose projection falls inside the (closed) base rectangle and whose
/// signed distance above the plane lies in `(0, height_threshold]` are object
/// candidates; the largest such distance is the height. The plane normal is
/// flipped if more candidates lie below than above it.
pub fn box_from_corners(cloud: &PointCloud, t: &CornerTriple, height_threshold: f64) -> Result<OrientedBox> {
    if !(height_threshold > 0.0) {
        return Err(Error::Validation(format!("height threshold must be positive, got {height_threshold}")));
    }
    if cloud.is_empty() {
        return Err(Error::Validation("cannot annotate an empty cloud".into()));
    }
    let frame = t.frame()?;
    let mut plane = base_plane(t)?;

    let footprint = |p: &Point3<f64>, d: f64, n: &Vector3<f64>| {
        let q = p - n * d - frame.origin;
        let s = q.dot(&frame.u1);
        let r = q.dot(&frame.u2);
        (0.0..=frame.length).contains(&s) && (0.0..=frame.width).contains(&r)
    };

    let (mut above, mut below) = (0usize, 0usize);
    for p in cloud.points() {
        let d = plane.signed_distance(p);
        if d.abs() > 0.0 && d.abs() <= height_threshold && footprint(p, d, &plane.normal) {
            if d > 0.0 {
                above += 1;
            } else {
                below += 1;
            }
        }
    }
    if below > above {
        plane = plane.flipped();
    }

    let height = cloud
        .points()
        .iter()
        .filter_map(|p| {
            let d = plane.signed_distance(p);
            (d > 0.0 && d <= height_threshold && footprint(p, d, &plane.normal)).then_some(d)
        })
        .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.max(d))))
        .ok_or(Error::EmptyObject)?;

    let base_center = frame.origin + (frame.u1 * frame.length + frame.u2 * frame.width) * 0.5;
    let center = base_center + plane.normal * (height * 0.5);
    let yaw = frame.u1.y.atan2(frame.u1.x);
    OrientedBox::new(center, Vector3::new(frame.length, frame.width, height), yaw)
}
