//! Label JSON: one file per labeled cloud,
//! `{"cloud_id": ..., "class": "robot", "center": [x,y,z], "size": [l,w,h], "yaw": radians}`.

use std::fmt;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::OrientedBox;

/// The only class the detector knows.
pub const ROBOT_CLASS: &str = "robot";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub cloud_id: String,
    pub class: String,
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
}

/// One failing field of a label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldError {
    pub field: String,
    pub reason: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.reason)
    }
}

impl Label {
    pub fn from_box(cloud_id: impl Into<String>, b: &OrientedBox) -> Self {
        let c = b.center();
        let s = b.size();
        Label {
            cloud_id: cloud_id.into(),
            class: ROBOT_CLASS.to_string(),
            center: [c.x, c.y, c.z],
            size: [s.x, s.y, s.z],
            yaw: b.yaw(),
        }
    }

    /// All schema violations; empty when the label is valid.
    pub fn validate(&self) -> Vec<FieldError> {
        let mut errs = Vec::new();
        let mut fail = |field: &str, reason: String| {
            errs.push(FieldError {
                field: field.to_string(),
                reason,
            })
        };
        if self.cloud_id.trim().is_empty() {
            fail("cloud_id", "must be a non-empty string".into());
        }
        if self.class != ROBOT_CLASS {
            fail("class", format!("must be \"{ROBOT_CLASS}\", got {:?}", self.class));
        }
        for (i, v) in self.center.iter().enumerate() {
            if !v.is_finite() {
                fail(&format!("center[{i}]"), "must be finite".into());
            }
        }
        for (i, v) in self.size.iter().enumerate() {
            if !(v.is_finite() && *v > 0.0) {
                fail(&format!("size[{i}]"), format!("must be positive, got {v}"));
            }
        }
        if !self.yaw.is_finite() {
            fail("yaw", "must be finite".into());
        }
        errs
    }

    pub fn to_box(&self) -> Result<OrientedBox, Vec<FieldError>> {
        let errs = self.validate();
        if !errs.is_empty() {
            return Err(errs);
        }
        OrientedBox::new(Point3::from(self.center), Vector3::from(self.size), self.yaw).map_err(|e| {
            vec![FieldError {
                field: "box".into(),
                reason: e.to_string(),
            }]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_roundtrip() {
        let b = OrientedBox::new(Point3::new(1.0, 2.0, 0.25), Vector3::new(0.6, 0.4, 0.5), 1.0).unwrap();
        let l = Label::from_box("c1", &b);
        let text = serde_json::to_string(&l).unwrap();
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["class"], "robot");
        assert_eq!(v.as_object().unwrap().len(), 5);
        let back: Label = serde_json::from_str(&text).unwrap();
        assert_eq!(back.to_box().unwrap(), b);
    }

    #[test]
    fn lists_every_failing_field() {
        let l = Label {
            cloud_id: "".into(),
            class: "chair".into(),
            center: [0.0, f64::NAN, 0.0],
            size: [1.0, 0.0, -2.0],
            yaw: 0.0,
        };
        let fields: Vec<String> = l.validate().into_iter().map(|e| e.field).collect();
        assert_eq!(fields, ["cloud_id", "class", "center[1]", "size[1]", "size[2]"]);
    }
}
