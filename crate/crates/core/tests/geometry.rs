use std::f64::consts::PI;

use onestream::geometry::{box_iou_3d, center_distance, from_canonical, point_in_box, to_canonical, Box3D};
use onestream::points::PointCloud;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_box(rng: &mut ChaCha8Rng) -> Box3D {
    Box3D::new(
        [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-0.5..0.5)],
        [rng.gen_range(0.5..3.0), rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0)],
        rng.gen_range(-PI..PI),
    )
}

/// Monte-Carlo IoU from uniform samples in the bounding region of both boxes.
fn monte_carlo_iou(a: &Box3D, b: &Box3D, n: usize, rng: &mut ChaCha8Rng) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for c in a.corners().iter().chain(b.corners().iter()) {
        for k in 0..3 {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    let (mut both, mut any) = (0usize, 0usize);
    for _ in 0..n {
        let p = [rng.gen_range(lo[0]..hi[0]), rng.gen_range(lo[1]..hi[1]), rng.gen_range(lo[2]..hi[2])];
        let (ia, ib) = (a.contains(p), b.contains(p));
        both += (ia && ib) as usize;
        any += (ia || ib) as usize;
    }
    both as f64 / any as f64
}

#[test]
fn iou_examples() {
    let a = Box3D::new([0.0; 3], [1.0; 3], 0.0);
    assert!((box_iou_3d(&a, &a) - 1.0).abs() < 1e-12);
    let far = Box3D::new([5.0, 0.0, 0.0], [1.0; 3], 0.3);
    assert_eq!(box_iou_3d(&a, &far), 0.0);
    let half = Box3D::new([0.5, 0.0, 0.0], [1.0; 3], 0.0);
    assert!((box_iou_3d(&a, &half) - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn iou_matches_monte_carlo() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..30 {
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        let mc = monte_carlo_iou(&a, &b, 100_000, &mut rng);
        assert!((box_iou_3d(&a, &b) - mc).abs() < 1e-2, "{a:?} {b:?}");
    }
}

#[test]
fn distance_examples() {
    let a = Box3D::new([0.0; 3], [1.0; 3], 0.0);
    assert_eq!(center_distance(&a, &a), 0.0);
    assert_eq!(center_distance(&a, &Box3D::new([3.0, 4.0, 0.0], [1.0; 3], 0.0)), 5.0);
    assert_eq!(center_distance(&a, &Box3D::new([0.0, 0.0, 2.0], [1.0; 3], 0.0)), 2.0);
}

#[test]
fn canonical_frame_examples() {
    let r = Box3D::new([1.0, 2.0, 3.0], [2.0, 1.0, 1.0], PI / 2.0);
    let c = to_canonical(&PointCloud::new(vec![[1.0, 2.0, 3.0], [2.0, 2.0, 3.0]]), &r);
    assert!(c.coords()[0].iter().all(|v| v.abs() < 1e-12));
    let q = c.coords()[1];
    assert!((q[0] - 0.0).abs() < 1e-12 && (q[1] + 1.0).abs() < 1e-12 && q[2].abs() < 1e-12);
}

#[test]
fn membership_examples() {
    let b = Box3D::new([1.0, 1.0, 0.0], [2.0, 1.0, 1.0], 0.4);
    assert!(point_in_box(b.center, &b));
    assert!(point_in_box(b.to_world([0.999, 0.499, 0.499]), &b));
    assert!(!point_in_box(b.to_world([2.0, 0.0, 0.0]), &b));
}

#[test]
fn corners_and_centroid() {
    let u = Box3D::new([0.0; 3], [1.0; 3], 0.0);
    for c in u.corners() {
        assert!(c.iter().all(|v| (v.abs() - 0.5).abs() < 1e-15));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let b = random_box(&mut rng);
    let cs = b.corners();
    for k in 0..3 {
        let mean = cs.iter().map(|c| c[k]).sum::<f64>() / 8.0;
        assert!((mean - b.center[k]).abs() < 1e-12);
    }
    let (c, s) = (b.yaw.cos(), b.yaw.sin());
    let local = [b.size[0] / 2.0, b.size[1] / 2.0, b.size[2] / 2.0];
    let w = b.to_world(local);
    let want = [
        b.center[0] + c * local[0] - s * local[1],
        b.center[1] + s * local[0] + c * local[1],
        b.center[2] + local[2],
    ];
    for k in 0..3 {
        assert!((w[k] - want[k]).abs() < 1e-12);
    }
}

fn rigid(yaw: f64, t: [f64; 3]) -> impl Fn([f64; 3]) -> [f64; 3] {
    move |p| {
        let (c, s) = (yaw.cos(), yaw.sin());
        [c * p[0] - s * p[1] + t[0], s * p[0] + c * p[1] + t[1], p[2] + t[2]]
    }
}

fn moved(b: &Box3D, yaw: f64, t: [f64; 3]) -> Box3D {
    Box3D::new(rigid(yaw, t)(b.center), b.size, b.yaw + yaw)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn iou_symmetric_bounded(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        let (ab, ba) = (box_iou_3d(&a, &b), box_iou_3d(&b, &a));
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((box_iou_3d(&a, &a) - 1.0).abs() < 1e-12);
        let flipped = Box3D::new(a.center, a.size, a.yaw + PI);
        prop_assert!((box_iou_3d(&a, &flipped) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn membership_and_iou_rigid_invariant(seed in any::<u64>(), yaw in -PI..PI, tx in -50.0..50.0f64, ty in -50.0..50.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        let t = [tx, ty, 0.7];
        let f = rigid(yaw, t);
        for _ in 0..20 {
            let local = [rng.gen_range(-0.6..0.6) * a.size[0] * 2.0, rng.gen_range(-0.6..0.6) * a.size[1] * 2.0, rng.gen_range(-0.6..0.6) * a.size[2] * 2.0];
            let p = a.to_world(local);
            // skip points within rounding of a face
            let margin = (0..3).map(|k| (local[k].abs() - a.size[k] / 2.0).abs()).fold(f64::INFINITY, f64::min);
            if margin > 1e-9 {
                prop_assert_eq!(point_in_box(p, &a), point_in_box(f(p), &moved(&a, yaw, t)));
            }
        }
        let d = (box_iou_3d(&a, &b) - box_iou_3d(&moved(&a, yaw, t), &moved(&b, yaw, t))).abs();
        prop_assert!(d < 1e-9);
    }

    #[test]
    fn canonical_roundtrip(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let r = random_box(&mut rng);
        let cloud = PointCloud::new((0..20).map(|_| [rng.gen_range(-9.0..9.0), rng.gen_range(-9.0..9.0), rng.gen_range(-2.0..2.0)]).collect());
        let back = from_canonical(&to_canonical(&cloud, &r), &r);
        for (p, q) in cloud.coords().iter().zip(back.coords()) {
            for k in 0..3 {
                prop_assert!((p[k] - q[k]).abs() < 1e-9);
            }
        }
    }
}
