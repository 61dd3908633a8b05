//! Oriented 3-D boxes: membership, rotated IoU, canonical frames and corners.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::points::PointCloud;

/// Wraps an angle into `(-π, π]`.
pub fn normalize_yaw(yaw: f64) -> f64 {
    let mut y = yaw - 2.0 * PI * ((yaw + PI) / (2.0 * PI)).floor();
    if y <= -PI {
        y += 2.0 * PI;
    }
    if y > PI {
        y -= 2.0 * PI;
    }
    y
}

/// Box with center `(x, y, z)`, size `(l, w, h)` and heading `yaw` about +z.
/// `l` runs along the heading, `w` across it, `h` vertically.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box3D {
    pub center: [f64; 3],
    pub size: [f64; 3],
    pub yaw: f64,
}

impl Box3D {
    pub fn new(center: [f64; 3], size: [f64; 3], yaw: f64) -> Self {
        debug_assert!(size.iter().all(|&s| s > 0.0), "box sizes must be positive: {size:?}");
        Box3D {
            center,
            size,
            yaw: normalize_yaw(yaw),
        }
    }

    /// `[x, y, z, l, w, h, yaw]`
    pub fn to_array(&self) -> [f64; 7] {
        let [x, y, z] = self.center;
        let [l, w, h] = self.size;
        [x, y, z, l, w, h, self.yaw]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Box3D::new([a[0], a[1], a[2]], [a[3], a[4], a[5]], a[6])
    }

    pub fn volume(&self) -> f64 {
        self.size.iter().product()
    }

    /// World point expressed in this box's frame (origin at center, heading along +x).
    pub fn to_local(&self, p: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        let dx = p[0] - self.center[0];
        let dy = p[1] - self.center[1];
        [c * dx + s * dy, -s * dx + c * dy, p[2] - self.center[2]]
    }

    pub fn to_world(&self, q: [f64; 3]) -> [f64; 3] {
        let (s, c) = self.yaw.sin_cos();
        [
            c * q[0] - s * q[1] + self.center[0],
            s * q[0] + c * q[1] + self.center[1],
            q[2] + self.center[2],
        ]
    }

    /// Boundary-inclusive point membership.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        let q = self.to_local(p);
        q.iter().zip(&self.size).all(|(v, s)| v.abs() <= s / 2.0)
    }

    /// Same extent grown by `margin` on every side (`x`, `y`, `z`).
    pub fn enlarged(&self, margin: [f64; 3]) -> Self {
        Box3D {
            size: [
                self.size[0] + 2.0 * margin[0],
                self.size[1] + 2.0 * margin[1],
                self.size[2] + 2.0 * margin[2],
            ],
            ..*self
        }
    }

    /// This box described in the frame of `reference`.
    pub fn in_frame_of(&self, reference: &Box3D) -> Box3D {
        Box3D::new(reference.to_local(self.center), self.size, self.yaw - reference.yaw)
    }

    /// Inverse of [`Box3D::in_frame_of`].
    pub fn from_frame_of(&self, reference: &Box3D) -> Box3D {
        Box3D::new(reference.to_world(self.center), self.size, self.yaw + reference.yaw)
    }

    /// BEV footprint corners, counter-clockwise starting at the front-left.
    pub fn bev_corners(&self) -> [[f64; 2]; 4] {
        let (hl, hw) = (self.size[0] / 2.0, self.size[1] / 2.0);
        let local = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        local.map(|[u, v]| {
            let p = self.to_world([u, v, 0.0]);
            [p[0], p[1]]
        })
    }

    /// Corner order: bottom face (z = -h/2) counter-clockwise from (+l/2, +w/2),
    /// then the top face in the same order.
    pub fn corners(&self) -> [[f64; 3]; 8] {
        let [hl, hw, hh] = self.size.map(|s| s / 2.0);
        let ring = [[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]];
        let mut out = [[0.0; 3]; 8];
        for (i, z) in [-hh, hh].into_iter().enumerate() {
            for (j, [u, v]) in ring.iter().enumerate() {
                out[i * 4 + j] = self.to_world([*u, *v, z]);
            }
        }
        out
    }
}

pub fn point_in_box(p: [f64; 3], b: &Box3D) -> bool {
    b.contains(p)
}

pub fn center_distance(a: &Box3D, b: &Box3D) -> f64 {
    a.center
        .iter()
        .zip(&b.center)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Sutherland–Hodgman clipping of `subject` against the convex CCW polygon `clip`.
pub fn clip_polygon(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut output = subject.to_vec();
    for i in 0..clip.len() {
        if output.is_empty() {
            break;
        }
        let (e0, e1) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut output);
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let cur_in = cross(e0, e1, cur) >= 0.0;
            let prev_in = cross(e0, e1, prev) >= 0.0;
            if cur_in != prev_in {
                let (dp, dc) = (cross(e0, e1, prev), cross(e0, e1, cur));
                let t = dp / (dp - dc);
                output.push([prev[0] + t * (cur[0] - prev[0]), prev[1] + t * (cur[1] - prev[1])]);
            }
            if cur_in {
                output.push(cur);
            }
        }
    }
    output
}

/// Shoelace area (absolute).
pub fn polygon_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    twice.abs() / 2.0
}

pub fn bev_intersection_area(a: &Box3D, b: &Box3D) -> f64 {
    polygon_area(&clip_polygon(&a.bev_corners(), &b.bev_corners()))
}

/// Rotated 3-D IoU: BEV polygon intersection times vertical overlap, over the union volume.
pub fn box_iou_3d(a: &Box3D, b: &Box3D) -> f64 {
    let za = (a.center[2] - a.size[2] / 2.0, a.center[2] + a.size[2] / 2.0);
    let zb = (b.center[2] - b.size[2] / 2.0, b.center[2] + b.size[2] / 2.0);
    let dz = (za.1.min(zb.1) - za.0.max(zb.0)).max(0.0);
    if dz == 0.0 {
        return 0.0;
    }
    let inter = bev_intersection_area(a, b) * dz;
    let union = a.volume() + b.volume() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Rigid transform of a cloud into the frame of `reference`; features are carried along.
pub fn to_canonical(cloud: &PointCloud, reference: &Box3D) -> PointCloud {
    cloud.map_coords(|p| reference.to_local(p))
}

pub fn from_canonical(cloud: &PointCloud, reference: &Box3D) -> PointCloud {
    cloud.map_coords(|p| reference.to_world(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_cube() -> Box3D {
        Box3D::new([0.0; 3], [1.0; 3], 0.0)
    }

    #[test]
    fn yaw_normalization() {
        assert!((normalize_yaw(3.0 * PI) - PI).abs() < 1e-12);
        assert_eq!(normalize_yaw(-PI), PI);
        assert!((normalize_yaw(-3.0 * PI / 2.0) - PI / 2.0).abs() < 1e-12);
        assert_eq!(normalize_yaw(0.25), 0.25);
    }

    #[test]
    fn membership() {
        let b = Box3D::new([1.0, 2.0, 0.5], [4.0, 2.0, 1.0], 0.7);
        assert!(b.contains(b.center));
        for c in b.corners() {
            // corners are inclusive up to rounding in the rotation round-trip
            let q = b.to_local(c);
            assert!(q.iter().zip(&b.size).all(|(v, s)| v.abs() <= s / 2.0 + 1e-12));
        }
        let far = b.to_world([4.0, 0.0, 0.0]);
        assert!(!b.contains(far));
        assert!(unit_cube().contains([0.5, 0.5, 0.5]));
    }

    #[test]
    fn iou_basic_cases() {
        let a = Box3D::new([0.3, -1.0, 0.2], [4.0, 1.8, 1.5], 0.4);
        assert!((box_iou_3d(&a, &a) - 1.0).abs() < 1e-12);
        let far = Box3D::new([10.0, 0.0, 0.0], [1.0; 3], 0.0);
        assert_eq!(box_iou_3d(&a, &far), 0.0);
        let shifted = Box3D::new([0.5, 0.0, 0.0], [1.0; 3], 0.0);
        assert!((box_iou_3d(&unit_cube(), &shifted) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou_symmetric_for_rotated_pair() {
        let a = Box3D::new([0.0, 0.0, 0.0], [3.0, 1.0, 1.0], 0.3);
        let b = Box3D::new([0.4, 0.2, 0.3], [2.0, 1.5, 1.2], -0.9);
        let (ab, ba) = (box_iou_3d(&a, &b), box_iou_3d(&b, &a));
        assert!((ab - ba).abs() < 1e-12 && ab > 0.0 && ab < 1.0);
    }

    #[test]
    fn half_turn_of_symmetric_footprint_is_identical() {
        let a = Box3D::new([1.0, 1.0, 0.0], [2.0, 1.0, 1.0], 0.2);
        let b = Box3D::new([1.0, 1.0, 0.0], [2.0, 1.0, 1.0], 0.2 + PI);
        assert!((box_iou_3d(&a, &b) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn distances() {
        let a = unit_cube();
        assert_eq!(center_distance(&a, &a), 0.0);
        let b = Box3D::new([3.0, 4.0, 0.0], [1.0; 3], 0.0);
        assert_eq!(center_distance(&a, &b), 5.0);
        let c = Box3D::new([0.0, 0.0, 2.0], [1.0; 3], 0.0);
        assert_eq!(center_distance(&a, &c), 2.0);
    }

    #[test]
    fn canonical_frame() {
        let r = Box3D::new([2.0, -1.0, 0.5], [1.0; 3], PI / 2.0);
        assert_eq!(r.to_local(r.center), [0.0, 0.0, 0.0]);
        let q = r.to_local([2.0 + 1.0, -1.0, 0.5]);
        assert!((q[0]).abs() < 1e-12 && (q[1] + 1.0).abs() < 1e-12 && q[2].abs() < 1e-12);
        let cloud = PointCloud::new(vec![[0.3, 7.0, -2.0], [1.0, 1.0, 1.0]]);
        let back = from_canonical(&to_canonical(&cloud, &r), &r);
        for (a, b) in cloud.coords().iter().zip(back.coords()) {
            for k in 0..3 {
                assert!((a[k] - b[k]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn corner_layout() {
        let c = unit_cube().corners();
        assert_eq!(c[0], [0.5, 0.5, -0.5]);
        assert_eq!(c[6], [-0.5, -0.5, 0.5]);
        for corner in c {
            assert!(corner.iter().all(|v| v.abs() == 0.5));
        }
        let b = Box3D::new([1.0, 2.0, 3.0], [2.0, 1.0, 0.5], 0.8);
        let cs = b.corners();
        for k in 0..3 {
            let mean = cs.iter().map(|p| p[k]).sum::<f64>() / 8.0;
            assert!((mean - b.center[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn box_frame_roundtrip() {
        let r = Box3D::new([5.0, 3.0, 1.0], [1.0; 3], -2.5);
        let b = Box3D::new([4.0, 2.0, 0.0], [4.0, 2.0, 1.5], 3.0);
        let back = b.in_frame_of(&r).from_frame_of(&r);
        for k in 0..3 {
            assert!((b.center[k] - back.center[k]).abs() < 1e-12);
        }
        assert!((normalize_yaw(b.yaw - back.yaw)).abs() < 1e-12);
    }
}
