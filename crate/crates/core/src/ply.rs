//! ASCII PLY reading and writing.
//!
//! Writing always produces a single `vertex` element with `x`, `y`, `z`
//! float properties. Reading accepts any ASCII file whose first element is
//! `vertex` with `x`, `y`, `z` among its scalar properties; extra vertex
//! properties and trailing elements are skipped. Parse errors carry the byte
//! offset of the offending line.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::Point3;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

/// Serializes `cloud` as ASCII PLY. Coordinates use the shortest
/// representation that round-trips the `f64` exactly.
pub fn to_ply_string(cloud: &PointCloud) -> String {
    let mut out = String::with_capacity(64 + cloud.len() * 40);
    out.push_str("ply\nformat ascii 1.0\n");
    let _ = writeln!(out, "element vertex {}", cloud.len());
    out.push_str("property float x\nproperty float y\nproperty float z\nend_header\n");
    for p in cloud.points() {
        let _ = writeln!(out, "{} {} {}", p.x, p.y, p.z);
    }
    out
}

pub fn save_ply(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_ply_string(cloud)).map_err(|e| Error::io(path, e))
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<PointCloud> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_ply(&bytes)
}

struct Lines<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Lines<'a> {
    /// Next line with its starting byte offset, `\r\n` tolerated.
    fn next_line(&mut self) -> Option<(usize, Result<&'a str>)> {
        if self.pos >= self.data.len() {
            return None;
        }
        let start = self.pos;
        let rest = &self.data[start..];
        let end = rest.iter().position(|&b| b == b'\n').map_or(rest.len(), |i| i);
        self.pos = start + end + 1;
        let raw = &rest[..end];
        let raw = raw.strip_suffix(b"\r").unwrap_or(raw);
        let text = std::str::from_utf8(raw).map_err(|_| Error::Parse {
            offset: start,
            reason: "line is not valid UTF-8".into(),
        });
        Some((start, text))
    }
}

fn parse_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        reason: reason.into(),
    }
}

struct ElementHeader {
    name: String,
    count: usize,
    properties: Vec<String>,
}

/// Parses an ASCII PLY document.
pub fn parse_ply(data: &[u8]) -> Result<PointCloud> {
    let mut lines = Lines { data, pos: 0 };

    match lines.next_line() {
        Some((_, Ok("ply"))) => {}
        Some((off, _)) => return Err(parse_err(off, "missing 'ply' magic")),
        None => return Err(parse_err(0, "empty input, missing 'ply' magic")),
    }

    let mut format_seen = false;
    let mut elements: Vec<ElementHeader> = Vec::new();
    loop {
        let Some((off, line)) = lines.next_line() else {
            return Err(parse_err(data.len(), "header ended before 'end_header'"));
        };
        let line = line?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("end_header") => break,
            Some("comment") | Some("obj_info") | None => {}
            Some("format") => {
                let kind = tok.next();
                let version = tok.next();
                if kind != Some("ascii") {
                    return Err(parse_err(off, format!("unsupported format {:?}, only ascii is read", kind.unwrap_or(""))));
                }
                if version != Some("1.0") {
                    return Err(parse_err(off, "unsupported PLY version"));
                }
                format_seen = true;
            }
            Some("element") => {
                let name = tok.next().ok_or_else(|| parse_err(off, "element without a name"))?;
                let count = tok
                    .next()
                    .and_then(|c| c.parse::<usize>().ok())
                    .ok_or_else(|| parse_err(off, "element count is not a non-negative integer"))?;
                elements.push(ElementHeader {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let el = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(off, "property declared before any element"))?;
                let ty = tok.next().ok_or_else(|| parse_err(off, "property without a type"))?;
                if ty == "list" {
                    if el.name == "vertex" {
                        return Err(parse_err(off, "list properties on vertex are not supported"));
                    }
                    el.properties.push("<list>".into());
                } else {
                    if !is_scalar_type(ty) {
                        return Err(parse_err(off, format!("unknown property type {ty:?}")));
                    }
                    let name = tok.next().ok_or_else(|| parse_err(off, "property without a name"))?;
                    el.properties.push(name.to_string());
                }
            }
            Some(other) => return Err(parse_err(off, format!("unexpected header keyword {other:?}"))),
        }
    }
    if !format_seen {
        return Err(parse_err(lines.pos.min(data.len()), "header has no 'format' line"));
    }

    let vertex = match elements.first() {
        Some(e) if e.name == "vertex" => e,
        _ => return Err(parse_err(0, "first element must be 'vertex'")),
    };
    let column = |name: &str| {
        vertex
            .properties
            .iter()
            .position(|p| p == name)
            .ok_or_else(|| parse_err(0, format!("vertex element lacks property {name:?}")))
    };
    let (ix, iy, iz) = (column("x")?, column("y")?, column("z")?);
    let width = vertex.properties.len();

    let mut points = Vec::with_capacity(vertex.count);
    let mut values = Vec::with_capacity(width);
    while points.len() < vertex.count {
        let Some((off, line)) = lines.next_line() else {
            return Err(parse_err(
                data.len(),
                format!("truncated body: {} of {} vertices present", points.len(), vertex.count),
            ));
        };
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        values.clear();
        for t in line.split_whitespace() {
            let v: f64 = t
                .parse()
                .map_err(|_| parse_err(off, format!("vertex value {t:?} is not a number")))?;
            values.push(v);
        }
        if values.len() != width {
            return Err(parse_err(off, format!("vertex line has {} values, expected {width}", values.len())));
        }
        let p = Point3::new(values[ix], values[iy], values[iz]);
        if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
            return Err(parse_err(off, "non-finite vertex coordinate"));
        }
        points.push(p);
    }
    PointCloud::new(points)
}

fn is_scalar_type(ty: &str) -> bool {
    matches!(
        ty,
        "char" | "uchar" | "short" | "ushort" | "int" | "uint" | "float" | "double" | "int8" | "uint8" | "int16"
            | "uint16" | "int32" | "uint32" | "float32" | "float64"
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_three_points() {
        let c = PointCloud::from_xyz(&[[0.1, -2.5, 3.0], [1e-7, 4.25, -0.333333333], [0.0, 0.0, 0.0]]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ply");
        save_ply(&c, &path).unwrap();
        let back = load_ply(&path).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in c.points().iter().zip(back.points()) {
            assert!((a - b).norm() < 1e-6);
        }
    }

    #[test]
    fn missing_magic() {
        let err = parse_ply(b"not a ply\n").unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 0, .. }), "{err}");
    }

    #[test]
    fn empty_cloud_file() {
        let text = to_ply_string(&PointCloud::empty());
        assert!(text.contains("element vertex 0\n"));
        assert!(parse_ply(text.as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn truncated_body_reports_end_offset() {
        let text = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        match parse_ply(text.as_bytes()).unwrap_err() {
            Error::Parse { offset, reason } => {
                assert_eq!(offset, text.len());
                assert!(reason.contains("truncated"));
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn bad_number_offset_points_at_line() {
        let head = "ply\nformat ascii 1.0\nelement vertex 2\nproperty float x\nproperty float y\nproperty float z\nend_header\n1 2 3\n";
        let text = format!("{head}1 x 3\n");
        match parse_ply(text.as_bytes()).unwrap_err() {
            Error::Parse { offset, .. } => assert_eq!(offset, head.len()),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn extra_properties_and_faces_are_skipped() {
        let text = "ply\r\nformat ascii 1.0\r\ncomment made elsewhere\r\nelement vertex 2\r\nproperty double z\r\nproperty uchar red\r\nproperty double x\r\nproperty double y\r\nelement face 1\r\nproperty list uchar int vertex_indices\r\nend_header\r\n3 255 1 2\r\n6 0 4 5\r\n3 0 1 1\r\n";
        let c = parse_ply(text.as_bytes()).unwrap();
        assert_eq!(c.to_xyz(), vec![[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]);
    }

    #[test]
    fn binary_format_rejected() {
        let text = "ply\nformat binary_little_endian 1.0\nelement vertex 0\nend_header\n";
        assert!(matches!(parse_ply(text.as_bytes()), Err(Error::Parse { offset: 4, .. })));
    }

    #[test]
    fn header_without_end() {
        let text = "ply\nformat ascii 1.0\nelement vertex 0\n";
        assert!(matches!(parse_ply(text.as_bytes()), Err(Error::Parse { .. })));
    }
}
