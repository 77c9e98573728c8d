use nalgebra::Vector2;

use super::OrientedBox;

#[inline]
fn cross(o: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Shoelace area; positive for counterclockwise polygons.
pub fn polygon_area(poly: &[Vector2<f64>]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let mut s = 0.0;
    for i in 0..n {
        let a = &poly[i];
        let b = &poly[(i + 1) % n];
        s += a.x * b.y - a.y * b.x;
    }
    0.5 * s
}

/// Sutherland–Hodgman: clips `subject` against the convex counterclockwise
/// polygon `clip`. Points on a clip edge count as inside.
pub fn convex_clip(subject: &[Vector2<f64>], clip: &[Vector2<f64>]) -> Vec<Vector2<f64>> {
    let mut output: Vec<Vector2<f64>> = subject.to_vec();
    let m = clip.len();
    for i in 0..m {
        if output.is_empty() {
            break;
        }
        let e0 = clip[i];
        let e1 = clip[(i + 1) % m];
        let input = std::mem::take(&mut output);
        let n = input.len();
        for j in 0..n {
            let cur = input[j];
            let prev = input[(j + n - 1) % n];
            let cur_side = cross(&e0, &e1, &cur);
            let prev_side = cross(&e0, &e1, &prev);
            if cur_side >= 0.0 {
                if prev_side < 0.0 {
                    output.push(intersect(&prev, &cur, prev_side, cur_side));
                }
                output.push(cur);
            } else if prev_side >= 0.0 {
                output.push(intersect(&prev, &cur, prev_side, cur_side));
            }
        }
    }
    output
}

/// Point on segment `p→q` where the signed edge distance crosses zero.
#[inline]
fn intersect(p: &Vector2<f64>, q: &Vector2<f64>, dp: f64, dq: f64) -> Vector2<f64> {
    let t = dp / (dp - dq);
    p + (q - p) * t
}

/// Yaw-aware 3D intersection over union: exact rotated-rectangle overlap in
/// the horizontal plane times the vertical overlap.
pub fn box_iou(a: &OrientedBox, b: &OrientedBox) -> f64 {
    let za = (a.center().z - a.size().z * 0.5, a.center().z + a.size().z * 0.5);
    let zb = (b.center().z - b.size().z * 0.5, b.center().z + b.size().z * 0.5);
    let dz = za.1.min(zb.1) - za.0.max(zb.0);
    if dz <= 0.0 {
        return 0.0;
    }
    let inter_area = polygon_area(&convex_clip(&a.footprint(), &b.footprint())).max(0.0);
    let inter = inter_area * dz;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Point3, Vector3};
    use std::f64::consts::FRAC_PI_4;

    fn cube(x: f64, y: f64, z: f64, yaw: f64) -> OrientedBox {
        OrientedBox::new(Point3::new(x, y, z), Vector3::new(1.0, 1.0, 1.0), yaw).unwrap()
    }

    #[test]
    fn identical() {
        let b = OrientedBox::new(Point3::new(0.3, -1.0, 2.0), Vector3::new(0.6, 0.4, 0.2), 0.7).unwrap();
        assert!((box_iou(&b, &b) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint() {
        assert_eq!(box_iou(&cube(0.0, 0.0, 0.0, 0.0), &cube(5.0, 0.0, 0.0, 0.3)), 0.0);
        assert_eq!(box_iou(&cube(0.0, 0.0, 0.0, 0.0), &cube(0.0, 0.0, 1.5, 0.0)), 0.0);
    }

    #[test]
    fn half_offset_cubes() {
        let iou = box_iou(&cube(0.0, 0.0, 0.0, 0.0), &cube(0.5, 0.0, 0.0, 0.0));
        assert!((iou - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn rotated_square_in_square() {
        // diamond inscribed: the 45° unit square overlaps the axis-aligned one
        // in a regular octagon of area 2(√2 - 1)
        let iou = box_iou(&cube(0.0, 0.0, 0.0, 0.0), &cube(0.0, 0.0, 0.0, FRAC_PI_4));
        let inter = 2.0 * (2f64.sqrt() - 1.0);
        assert!((iou - inter / (2.0 - inter)).abs() < 1e-12);
    }

    #[test]
    fn contained_box() {
        let big = OrientedBox::new(Point3::origin(), Vector3::new(2.0, 2.0, 2.0), 0.2).unwrap();
        let small = OrientedBox::new(Point3::origin(), Vector3::new(1.0, 1.0, 1.0), -0.4).unwrap();
        assert!((box_iou(&big, &small) - 1.0 / 8.0).abs() < 1e-12);
    }
}
