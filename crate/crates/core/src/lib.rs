//! Geometry and data model for marker-less AR device calibration against a
//! mobile robot.
//!
//! The crate covers everything that does not involve learning:
//!
//! - [`cloud`]: point clouds and depth-frame unprojection onto the camera
//!   unit plane, with the valid-range gate.
//! - [`ply`]: ASCII PLY reading and writing.
//! - [`transform`]: rigid transforms and the AR-to-map calibration chain.
//! - [`geometry`]: oriented boxes, the three-corner annotation engine and
//!   rotated 3D IoU.
//! - [`augmentation`]: label-consistent scale/flip/rotate augmentation and
//!   fixed-size subsampling.
//! - [`label`]: the on-disk label JSON schema.
//!
//! All operations are pure functions over immutable values.

pub mod augmentation;
pub mod cloud;
pub mod error;
pub mod geometry;
pub mod label;
pub mod ply;
pub mod transform;

pub use augmentation::{Axis, AugmentConfig, LabeledCloud};
pub use cloud::{DepthFrame, PinholeIntrinsics, PointCloud, RangeGate};
pub use error::{Error, Result};
pub use geometry::{wrap_angle, CornerTriple, OrientedBox, Plane};
pub use label::Label;
pub use transform::RigidTransform;

pub use nalgebra::{Matrix3, Point3, Vector3};
