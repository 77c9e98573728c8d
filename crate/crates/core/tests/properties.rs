use std::f64::consts::PI;

use arcal_core::augmentation::{flip_axis, random_scale, rotate_z, Axis, LabeledCloud};
use arcal_core::cloud::{depth_to_cloud, unproject, DepthFrame, PointCloud, RangeGate};
use arcal_core::geometry::{box_from_corners, box_iou, points_in_box, CornerTriple, OrientedBox};
use arcal_core::ply::{parse_ply, to_ply_string};
use arcal_core::transform::{calibrate_ar_to_map, RigidTransform};
use nalgebra::{Point3, Rotation3, Vector3};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arb_transform() -> impl Strategy<Value = RigidTransform> {
    (-PI..PI, -1.5..1.5f64, -PI..PI, prop::array::uniform3(-10.0..10.0f64)).prop_map(|(r, p, y, t)| {
        RigidTransform::from_rotation(Rotation3::from_euler_angles(r, p, y), Vector3::from(t))
    })
}

fn arb_box() -> impl Strategy<Value = OrientedBox> {
    (prop::array::uniform3(-2.0..2.0f64), prop::array::uniform3(0.1..1.5f64), -PI..PI)
        .prop_map(|(c, s, y)| OrientedBox::new(Point3::from(c), Vector3::from(s), y).unwrap())
}

fn random_labeled(rng: &mut ChaCha8Rng) -> LabeledCloud {
    let b = OrientedBox::new(
        Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(0.1..0.5)),
        Vector3::new(rng.random_range(0.2..0.8), rng.random_range(0.2..0.8), rng.random_range(0.2..0.8)),
        rng.random_range(-PI..PI),
    )
    .unwrap();
    let mut pts = vec![b.center()];
    for _ in 0..200 {
        pts.push(Point3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-0.5..1.5)));
    }
    LabeledCloud::new("r", PointCloud::new(pts).unwrap(), Some(b)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn compose_is_associative(a in arb_transform(), b in arb_transform(), c in arb_transform()) {
        let l = a.compose(&b).compose(&c);
        let r = a.compose(&b.compose(&c));
        prop_assert!(l.max_abs_diff(&r) < 1e-9);
    }

    #[test]
    fn inverse_is_an_involution(t in arb_transform()) {
        prop_assert!(t.inverse().inverse().max_abs_diff(&t) < 1e-12);
        prop_assert!(t.inverse().compose(&t).max_abs_diff(&RigidTransform::identity()) < 1e-9);
    }

    #[test]
    fn calibration_round_trip(map in arb_transform(), ar in arb_transform()) {
        let ar_to_map = calibrate_ar_to_map(&map, &ar);
        prop_assert!(ar_to_map.compose(&ar).max_abs_diff(&map) < 1e-9);
    }

    #[test]
    fn unprojection_identities(u in -2.0..2.0f64, v in -2.0..2.0f64, d in 0.4..4.0f64) {
        let p = unproject(u, v, d);
        prop_assert!((p.coords.norm() - d).abs() < 1e-9);
        prop_assert!((p.x / p.z - u).abs() < 1e-9);
        prop_assert!((p.y / p.z - v).abs() < 1e-9);
    }

    #[test]
    fn ply_round_trip(xyz in prop::collection::vec(prop::array::uniform3(-1e3..1e3f64), 0..300)) {
        let cloud = PointCloud::from_xyz(&xyz).unwrap();
        let back = parse_ply(to_ply_string(&cloud).as_bytes()).unwrap();
        prop_assert_eq!(back.len(), cloud.len());
        for (a, b) in cloud.points().iter().zip(back.points()) {
            prop_assert!((a - b).abs().max() <= 1e-6);
        }
    }

    #[test]
    fn membership_invariant_under_planar_motion(b in arb_box(), yaw in -PI..PI, t in prop::array::uniform3(-3.0..3.0f64),
                                                 xyz in prop::collection::vec(prop::array::uniform3(-3.0..3.0f64), 1..100)) {
        let cloud = PointCloud::from_xyz(&xyz).unwrap();
        let motion = RigidTransform::from_yaw(yaw, Vector3::from(t));
        let moved_box = OrientedBox::new(motion.apply_point(&b.center()), b.size(), b.yaw() + yaw).unwrap();
        let moved = motion.apply(&cloud);
        // points within 1e-9 of a face may legitimately flip
        let near_face = |p: &Point3<f64>| {
            let l = b.to_local(p);
            let h = b.size() * 0.5;
            (l.x.abs() - h.x).abs() < 1e-9 || (l.y.abs() - h.y).abs() < 1e-9 || (l.z.abs() - h.z).abs() < 1e-9
        };
        let keep: Vec<usize> = (0..cloud.len()).filter(|&i| !near_face(&cloud.points()[i])).collect();
        let before: Vec<usize> = points_in_box(&cloud, &b).into_iter().filter(|i| keep.contains(i)).collect();
        let after: Vec<usize> = points_in_box(&moved, &moved_box).into_iter().filter(|i| keep.contains(i)).collect();
        prop_assert_eq!(before, after);
    }
}

#[test]
fn depth_to_cloud_row_major_norms() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let n = 1000;
    let depth: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..5.0)).collect();
    let uv: Vec<[f64; 2]> = (0..n).map(|_| [rng.random_range(-1.5..1.5), rng.random_range(-1.5..1.5)]).collect();
    let frame = DepthFrame::new(n, 1, depth.clone(), uv).unwrap();
    let cloud = depth_to_cloud(&frame, RangeGate::default()).unwrap();
    let expected: Vec<f64> = depth.into_iter().filter(|d| (0.4..=4.0).contains(d)).collect();
    assert_eq!(cloud.len(), expected.len());
    for (p, d) in cloud.points().iter().zip(expected) {
        assert!((p.coords.norm() - d).abs() < 1e-9);
    }
}

#[test]
fn augmentations_preserve_membership() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..100 {
        let lc = random_labeled(&mut rng);
        let inside = points_in_box(&lc.cloud, lc.label.as_ref().unwrap());
        let scaled = random_scale(&lc, rng.random_range(0.5..2.0)).unwrap();
        let rotated = rotate_z(&lc, rng.random_range(-PI..PI)).unwrap();
        for out in [scaled, rotated, flip_axis(&lc, Axis::X), flip_axis(&lc, Axis::Y)] {
            assert_eq!(points_in_box(&out.cloud, out.label.as_ref().unwrap()), inside);
        }
    }
}

#[test]
fn double_flip_equals_half_turn() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let lc = random_labeled(&mut rng);
        let both = flip_axis(&flip_axis(&lc, Axis::X), Axis::Y);
        let turned = rotate_z(&lc, PI).unwrap();
        for (a, b) in both.cloud.points().iter().zip(turned.cloud.points()) {
            assert!((a - b).norm() < 1e-12);
        }
        let (ya, yb) = (both.label.unwrap().yaw(), turned.label.unwrap().yaw());
        assert!(arcal_core::wrap_angle(ya - yb).abs() < 1e-12);
    }
}

/// Fraction of uniform samples in the joint bounding region that fall in
/// both boxes over those in either.
fn monte_carlo_iou(a: &OrientedBox, b: &OrientedBox, samples: usize, rng: &mut ChaCha8Rng) -> f64 {
    let corners: Vec<Point3<f64>> = a.corners().into_iter().chain(b.corners()).collect();
    let lo = corners.iter().fold(Vector3::repeat(f64::INFINITY), |m, p| m.inf(&p.coords));
    let hi = corners.iter().fold(Vector3::repeat(f64::NEG_INFINITY), |m, p| m.sup(&p.coords));
    let (mut inter, mut union) = (0usize, 0usize);
    for _ in 0..samples {
        let p = Point3::new(
            rng.random_range(lo.x..hi.x),
            rng.random_range(lo.y..hi.y),
            rng.random_range(lo.z..hi.z),
        );
        let (ia, ib) = (a.contains(&p), b.contains(&p));
        inter += (ia && ib) as usize;
        union += (ia || ib) as usize;
    }
    inter as f64 / union as f64
}

#[test]
fn iou_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let a = OrientedBox::new(
            Point3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2)),
            Vector3::new(rng.random_range(0.3..1.0), rng.random_range(0.3..1.0), rng.random_range(0.3..1.0)),
            rng.random_range(-PI..PI),
        )
        .unwrap();
        let b = OrientedBox::new(
            Point3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.2..0.2)),
            Vector3::new(rng.random_range(0.3..1.0), rng.random_range(0.3..1.0), rng.random_range(0.3..1.0)),
            rng.random_range(-PI..PI),
        )
        .unwrap();
        let mc = monte_carlo_iou(&a, &b, 200_000, &mut rng);
        assert!((box_iou(&a, &b) - mc).abs() < 0.01, "exact {} vs mc {mc}", box_iou(&a, &b));
    }
}

#[test]
fn corners_recover_a_dense_box() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..50 {
        let truth = OrientedBox::new(
            Point3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.0),
            Vector3::new(rng.random_range(0.3..0.9), rng.random_range(0.3..0.9), rng.random_range(0.2..0.8)),
            rng.random_range(-PI..PI),
        )
        .unwrap();
        let truth = truth.with_center(Point3::new(truth.center().x, truth.center().y, truth.size().z / 2.0));
        let h = truth.size() * 0.5;
        let mut pts: Vec<Point3<f64>> = (0..2000)
            .map(|_| {
                let local = Vector3::new(rng.random_range(-h.x..h.x), rng.random_range(-h.y..h.y), rng.random_range(-h.z..h.z));
                local_to_world(&truth, local)
            })
            .collect();
        pts.push(local_to_world(&truth, Vector3::new(0.0, 0.0, h.z)));
        let c = truth.corners();
        // bottom corners are CCW from (-l/2, -w/2); corner 0 is shared and 0→1 runs along the heading
        let triple = CornerTriple::new(c[1], c[0], c[3]);
        let got = box_from_corners(&PointCloud::new(pts).unwrap(), &triple, 1.0).unwrap();
        let tol = 1e-3 * truth.size().min();
        assert!((got.center() - truth.center()).norm() < tol);
        assert!(arcal_core::geometry::yaw_error_mod_pi(got.yaw(), truth.yaw()) < 1e-3);
        for corner in [triple.a, triple.b, triple.c] {
            let l = got.to_local(&corner);
            assert!((l.z + got.size().z / 2.0).abs() < 1e-9);
            assert!(l.x.abs() <= got.size().x / 2.0 + 1e-9 && l.y.abs() <= got.size().y / 2.0 + 1e-9);
        }
    }
}

fn local_to_world(b: &OrientedBox, l: Vector3<f64>) -> Point3<f64> {
    let (s, c) = b.yaw().sin_cos();
    b.center() + Vector3::new(c * l.x - s * l.y, s * l.x + c * l.y, l.z)
}
