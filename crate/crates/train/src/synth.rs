//! Synthetic desk-scale scenes: a floor patch, a box-shaped robot and a few
//! clutter boxes, labeled with the box that generated the robot points.

use std::f64::consts::PI;

use arcal_core::{CornerTriple, LabeledCloud, OrientedBox, Point3, PointCloud, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Robot surface samples sit this far inside the label box so that every
/// one of them is a member under rounding.
const SURFACE_INSET: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    /// Per-axis `(length, width, height)` bounds of the robot box.
    pub robot_size_min: [f64; 3],
    pub robot_size_max: [f64; 3],
    pub clutter: usize,
    /// Edge length bounds of clutter boxes.
    pub clutter_size: (f64, f64),
    /// Half-width of the square floor patch centered at the origin.
    pub floor_extent: f64,
    /// Gaussian sensor noise on floor and clutter points.
    pub noise_sigma: f64,
    pub floor_points: usize,
    pub robot_points: usize,
    pub clutter_points: usize,
    pub has_object: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            robot_size_min: [0.4, 0.3, 0.2],
            robot_size_max: [0.7, 0.5, 0.4],
            clutter: 3,
            clutter_size: (0.1, 0.3),
            floor_extent: 1.0,
            noise_sigma: 0.003,
            floor_points: 1500,
            robot_points: 800,
            clutter_points: 150,
            has_object: true,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let ok_sizes = (0..3).all(|i| self.robot_size_min[i] > 0.0 && self.robot_size_min[i] <= self.robot_size_max[i]);
        let (cl, ch) = self.clutter_size;
        if !ok_sizes || !(cl > 0.0 && cl <= ch) {
            return Err(Error::Validation("size bounds must be positive with min <= max".into()));
        }
        let footprint = self.robot_size_max[0].hypot(self.robot_size_max[1]);
        if !(self.floor_extent > footprint) {
            return Err(Error::Validation(format!("floor extent {} cannot hold the robot", self.floor_extent)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Validation(format!("noise sigma must be non-negative, got {}", self.noise_sigma)));
        }
        if self.has_object && self.robot_points == 0 {
            return Err(Error::Validation("a scene with the robot needs robot points".into()));
        }
        Ok(())
    }
}

/// Robot body inside its label box: a chassis over the full footprint and
/// a mast at the front end reaching the full height, so the heading is
/// visible in the geometry.
fn robot_parts(b: &OrientedBox) -> Result<[OrientedBox; 2]> {
    let s = b.size();
    let hc = 0.6 * s.z;
    let chassis = OrientedBox::new(local_to_world(b, Vector3::new(0.0, 0.0, (hc - s.z) / 2.0)), Vector3::new(s.x, s.y, hc), b.yaw())?;
    let mast_size = Vector3::new(0.25 * s.x, 0.4 * s.y, s.z);
    let mast = OrientedBox::new(local_to_world(b, Vector3::new(0.375 * s.x, 0.0, 0.0)), mast_size, b.yaw())?;
    Ok([chassis, mast])
}

/// A generated scene and the box that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub labeled: LabeledCloud,
    /// `None` in the object-free variant.
    pub truth: Option<OrientedBox>,
}

/// Base corners of a box resting on its bottom face, in the annotation
/// convention: `b` is the shared corner, `b→a` runs along the heading.
pub fn base_corners(b: &OrientedBox) -> CornerTriple {
    let s = b.size();
    let local = |x: f64, y: f64| local_to_world(b, Vector3::new(x, y, -s.z / 2.0));
    CornerTriple::new(local(s.x / 2.0, -s.y / 2.0), local(-s.x / 2.0, -s.y / 2.0), local(-s.x / 2.0, s.y / 2.0))
}

fn local_to_world(b: &OrientedBox, l: Vector3<f64>) -> Point3<f64> {
    let (s, c) = b.yaw().sin_cos();
    b.center() + Vector3::new(c * l.x - s * l.y, s * l.x + c * l.y, l.z)
}

/// Uniform samples over the top and four side faces of `b`, pulled `inset`
/// inside the box.
fn box_surface(b: &OrientedBox, n: usize, inset: f64, rng: &mut impl Rng) -> Vec<Point3<f64>> {
    let s = b.size();
    let h = s / 2.0 - Vector3::repeat(inset);
    let faces = [s.x * s.y, s.y * s.z, s.y * s.z, s.x * s.z, s.x * s.z];
    let total: f64 = faces.iter().sum();
    (0..n)
        .map(|_| {
            let mut pick = rng.random_range(0.0..total);
            let mut f = 0;
            while f < 4 && pick >= faces[f] {
                pick -= faces[f];
                f += 1;
            }
            let u = rng.random_range(-1.0..=1.0);
            let v = rng.random_range(-1.0..=1.0);
            let l = match f {
                0 => Vector3::new(u * h.x, v * h.y, h.z),
                1 => Vector3::new(h.x, u * h.y, v * h.z),
                2 => Vector3::new(-h.x, u * h.y, v * h.z),
                3 => Vector3::new(u * h.x, h.y, v * h.z),
                _ => Vector3::new(u * h.x, -h.y, v * h.z),
            };
            local_to_world(b, l)
        })
        .collect()
}

fn in_footprint(b: &OrientedBox, p: &Point3<f64>, margin: f64) -> bool {
    let l = b.to_local(p);
    let s = b.size();
    l.x.abs() <= s.x / 2.0 + margin && l.y.abs() <= s.y / 2.0 + margin
}

fn footprint_radius(b: &OrientedBox) -> f64 {
    0.5 * b.size().x.hypot(b.size().y)
}

pub fn synth_scene(spec: &SceneSpec, seed: u64) -> Result<SynthScene> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::Validation(e.to_string()))?;
    let e = spec.floor_extent;

    let robot = if spec.has_object {
        let size = Vector3::from_fn(|i, _| rng.random_range(spec.robot_size_min[i]..=spec.robot_size_max[i]));
        let reach = e / 2.0;
        let center = Point3::new(rng.random_range(-reach..reach), rng.random_range(-reach..reach), size.z / 2.0);
        Some(OrientedBox::new(center, size, rng.random_range(-PI..PI))?)
    } else {
        None
    };

    let mut clutter: Vec<OrientedBox> = Vec::new();
    for _ in 0..spec.clutter {
        for _attempt in 0..100 {
            let size = Vector3::from_fn(|_, _| rng.random_range(spec.clutter_size.0..=spec.clutter_size.1));
            let c = Point3::new(rng.random_range(-e..e), rng.random_range(-e..e), size.z / 2.0);
            let cand = OrientedBox::new(c, size, rng.random_range(-PI..PI))?;
            let clear = robot.iter().chain(&clutter).all(|o| {
                let d = (o.center().xy() - cand.center().xy()).norm();
                d > footprint_radius(o) + footprint_radius(&cand) + 0.1
            });
            if clear {
                clutter.push(cand);
                break;
            }
        }
    }

    let jitter = |p: Point3<f64>, rng: &mut ChaCha8Rng| {
        p + Vector3::new(noise.sample(rng), noise.sample(rng), noise.sample(rng))
    };
    let mut points = Vec::with_capacity(spec.floor_points + spec.robot_points + spec.clutter_points * clutter.len());
    let occluders: Vec<&OrientedBox> = robot.iter().chain(&clutter).collect();
    let mut floor = 0;
    while floor < spec.floor_points {
        let p = Point3::new(rng.random_range(-e..e), rng.random_range(-e..e), 0.0);
        if occluders.iter().any(|o| in_footprint(o, &p, 0.0)) {
            continue;
        }
        points.push(jitter(p, &mut rng));
        floor += 1;
    }
    for c in &clutter {
        for p in box_surface(c, spec.clutter_points, 0.0, &mut rng) {
            points.push(jitter(p, &mut rng));
        }
    }
    if let Some(r) = &robot {
        let [chassis, mast] = robot_parts(r)?;
        let n_mast = spec.robot_points / 4;
        points.extend(box_surface(&chassis, spec.robot_points - n_mast, SURFACE_INSET, &mut rng));
        points.extend(box_surface(&mast, n_mast, SURFACE_INSET, &mut rng));
    }

    let id = format!("synth-{seed:06}");
    let labeled = LabeledCloud::new(id, PointCloud::new(points)?, robot)?;
    Ok(SynthScene { labeled, truth: robot })
}

/// `count` scenes with consecutive seeds starting at `seed`.
pub fn synth_corpus(spec: &SceneSpec, count: usize, seed: u64) -> Result<Vec<LabeledCloud>> {
    (0..count as u64).map(|i| synth_scene(spec, seed + i).map(|s| s.labeled)).collect()
}
