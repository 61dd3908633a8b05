use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Frame, Sequence};
use crate::error::{Error, Result};
use crate::geometry::Box3D;
use crate::points::PointCloud;

/// Constant-speed heading walk: each frame moves along the current heading by a
/// speed drawn from `speed`, then turns by up to `yaw_rate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MotionModel {
    /// Per-frame translation bounds in meters.
    pub speed: (f64, f64),
    /// Maximum heading change per frame in radians.
    pub yaw_rate: f64,
    /// Initial heading; drawn uniformly when absent.
    pub initial_yaw: Option<f64>,
}

impl Default for MotionModel {
    fn default() -> Self {
        MotionModel {
            speed: (0.05, 0.2),
            yaw_rate: 0.03,
            initial_yaw: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub category: String,
    pub scene: usize,
    pub n_frames: usize,
    /// Target extents `(l, w, h)` in meters.
    pub size: [f64; 3],
    /// Surface points per square meter of cuboid shell.
    pub density: f64,
    pub motion: MotionModel,
    pub n_distractors: usize,
    /// Distractor extents; the target's when unset.
    pub distractor_size: Option<[f64; 3]>,
    /// Minimum center distance between any two objects in any frame.
    pub distractor_spacing: f64,
    /// Distractors are placed within this distance of the trajectory's bounding rectangle.
    pub distractor_range: f64,
    /// Maximum per-frame drift of a distractor.
    pub distractor_speed: f64,
    pub ground_points: usize,
    /// Ground noise covers the trajectory rectangle grown by this much.
    pub scene_margin: f64,
    pub ground_z: (f64, f64),
    /// Probability of dropping each object point.
    pub dropout: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            category: "Car".into(),
            scene: 0,
            n_frames: 20,
            size: [3.9, 1.6, 1.5],
            density: 20.0,
            motion: MotionModel::default(),
            n_distractors: 2,
            distractor_size: None,
            distractor_spacing: 6.0,
            distractor_range: 6.0,
            distractor_speed: 0.05,
            ground_points: 200,
            scene_margin: 6.0,
            ground_z: (-0.15, -0.02),
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synth: {m}")));
        if self.n_frames < 2 {
            return bad("n_frames must be at least 2");
        }
        let positive = |v: &[f64; 3]| v.iter().all(|s| *s > 0.0);
        if !positive(&self.size) || !self.distractor_size.as_ref().map_or(true, positive) || !(self.density > 0.0) {
            return bad("size and density must be positive");
        }
        if !(self.distractor_spacing > 0.0) || self.distractor_range < 0.0 || self.distractor_speed < 0.0 {
            return bad("distractor spacing must be positive, range and speed nonnegative");
        }
        let (s0, s1) = self.motion.speed;
        if s0 < 0.0 || s1 < s0 || self.motion.yaw_rate < 0.0 {
            return bad("motion bounds must satisfy 0 <= min <= max and yaw_rate >= 0");
        }
        if !(0.0..1.0).contains(&self.dropout) || self.ground_z.1 < self.ground_z.0 {
            return bad("dropout must lie in [0, 1) and ground_z be ordered");
        }
        Ok(())
    }

    pub fn sequence_id(&self) -> String {
        format!("synth-{}-{}", self.category.to_lowercase(), self.seed)
    }
}

const PLACEMENT_ATTEMPTS: usize = 1000;

/// Uniform samples on the six faces of `b`, each face getting `density · area` expected points.
fn sample_shell(b: &Box3D, density: f64, dropout: f64, rng: &mut ChaCha8Rng, out: &mut Vec<[f64; 3]>) {
    // Each face pair is given by its normal axis and the two in-plane axes.
    for (axis, others) in [(0, [1, 2]), (1, [0, 2]), (2, [0, 1])] {
        let expected = density * b.size[others[0]] * b.size[others[1]];
        let mut count = expected.floor() as usize;
        if rng.gen::<f64>() < expected - count as f64 {
            count += 1;
        }
        for side in [-0.5, 0.5] {
            for _ in 0..count {
                let mut q = [0.0; 3];
                q[axis] = side * b.size[axis];
                for &o in &others {
                    q[o] = (rng.gen::<f64>() - 0.5) * b.size[o];
                }
                if rng.gen::<f64>() >= dropout {
                    out.push(b.to_world(q));
                }
            }
        }
    }
}

/// Deterministic synthetic sequence of a moving cuboid among static or slow distractors.
pub fn synth_sequence(cfg: &SynthConfig) -> Result<Sequence> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let h = cfg.size[2];
    let mut yaw = cfg.motion.initial_yaw.unwrap_or_else(|| rng.gen_range(-PI..PI));
    let mut pos = [0.0, 0.0];
    let mut track = Vec::with_capacity(cfg.n_frames);
    for f in 0..cfg.n_frames {
        if f > 0 {
            let (s0, s1) = cfg.motion.speed;
            let step = if s1 > s0 { rng.gen_range(s0..=s1) } else { s0 };
            pos = [pos[0] + step * yaw.cos(), pos[1] + step * yaw.sin()];
            if cfg.motion.yaw_rate > 0.0 {
                yaw += rng.gen_range(-cfg.motion.yaw_rate..=cfg.motion.yaw_rate);
            }
        }
        track.push(Box3D::new([pos[0], pos[1], h / 2.0], cfg.size, yaw));
    }
    let xs = track.iter().map(|b| b.center[0]);
    let ys = track.iter().map(|b| b.center[1]);
    let lo = [xs.clone().fold(f64::INFINITY, f64::min), ys.clone().fold(f64::INFINITY, f64::min)];
    let hi = [xs.fold(f64::NEG_INFINITY, f64::max), ys.fold(f64::NEG_INFINITY, f64::max)];

    let dsize = cfg.distractor_size.unwrap_or(cfg.size);
    let mut distractors: Vec<Vec<Box3D>> = Vec::with_capacity(cfg.n_distractors);
    for k in 0..cfg.n_distractors {
        let r = cfg.distractor_range;
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let start = [rng.gen_range(lo[0] - r..=hi[0] + r), rng.gen_range(lo[1] - r..=hi[1] + r)];
            let dyaw = rng.gen_range(-PI..PI);
            let heading = rng.gen_range(-PI..PI);
            let speed = rng.gen::<f64>() * cfg.distractor_speed;
            let path: Vec<Box3D> = (0..cfg.n_frames)
                .map(|f| {
                    let t = f as f64 * speed;
                    Box3D::new(
                        [start[0] + t * heading.cos(), start[1] + t * heading.sin(), dsize[2] / 2.0],
                        dsize,
                        dyaw,
                    )
                })
                .collect();
            let far = |a: &Box3D, b: &Box3D| {
                (a.center[0] - b.center[0]).hypot(a.center[1] - b.center[1]) >= cfg.distractor_spacing
            };
            let clear = (0..cfg.n_frames)
                .all(|f| far(&path[f], &track[f]) && distractors.iter().all(|d| far(&path[f], &d[f])));
            if clear {
                placed = Some(path);
                break;
            }
        }
        distractors.push(placed.ok_or_else(|| {
            Error::Invalid(format!(
                "could not place distractor {k} at spacing {} m after {PLACEMENT_ATTEMPTS} attempts",
                cfg.distractor_spacing
            ))
        })?);
    }

    let m = cfg.scene_margin;
    let frames = (0..cfg.n_frames)
        .map(|f| {
            let mut pts = Vec::new();
            sample_shell(&track[f], cfg.density, cfg.dropout, &mut rng, &mut pts);
            for d in &distractors {
                sample_shell(&d[f], cfg.density, cfg.dropout, &mut rng, &mut pts);
            }
            for _ in 0..cfg.ground_points {
                pts.push([
                    rng.gen_range(lo[0] - m..=hi[0] + m),
                    rng.gen_range(lo[1] - m..=hi[1] + m),
                    rng.gen_range(cfg.ground_z.0..=cfg.ground_z.1),
                ]);
            }
            Frame {
                cloud: Arc::new(PointCloud::new(pts)),
                gt: track[f],
            }
        })
        .collect();
    Ok(Sequence {
        id: cfg.sequence_id(),
        category: cfg.category.clone(),
        scene: cfg.scene,
        frames,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn infeasible_spacing_is_reported() {
        let cfg = SynthConfig {
            n_distractors: 3,
            distractor_spacing: 100.0,
            distractor_range: 1.0,
            ..SynthConfig::default()
        };
        assert!(matches!(synth_sequence(&cfg), Err(Error::Invalid(_))));
    }
}
