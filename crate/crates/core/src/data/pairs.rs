use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Sequence;
use crate::error::{Error, Result};
use crate::geometry::Box3D;
use crate::losses::{make_bev_targets, BevTargets};
use crate::model::ModelConfig;
use crate::points::PointCloud;
use crate::tracker::{crop_and_sample, CropRegion};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugConfig {
    pub enabled: bool,
    /// Uniform search-center jitter bound in meters (x and y).
    pub jitter_xy: f64,
    /// Uniform search-heading jitter bound in degrees.
    pub jitter_yaw_deg: f64,
    pub search_margin: f64,
    pub template_margin: f64,
}

impl Default for AugConfig {
    fn default() -> Self {
        AugConfig {
            enabled: true,
            jitter_xy: 0.3,
            jitter_yaw_deg: 5.0,
            search_margin: 2.0,
            template_margin: 0.05,
        }
    }
}

/// One supervised example, both clouds in their own canonical frames.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub template: PointCloud,
    pub search: PointCloud,
    /// World box the search region was canonicalized at.
    pub search_ref: Box3D,
    /// Ground truth in the search frame.
    pub gt_local: Box3D,
    pub targets: BevTargets,
}

/// Template from the previous frame's ground truth, search around a jittered copy of
/// the current one. Returns `None` when either crop is empty.
pub fn sample_training_pair(
    seq: &Sequence,
    frame_idx: usize,
    cfg: &ModelConfig,
    aug: &AugConfig,
    seed: u64,
) -> Result<Option<TrainingPair>> {
    if frame_idx == 0 || frame_idx >= seq.frames.len() {
        return Err(Error::Index {
            index: frame_idx,
            len: seq.frames.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let prev = &seq.frames[frame_idx - 1];
    let cur = &seq.frames[frame_idx];
    let template = crop_and_sample(
        &prev.cloud,
        &CropRegion::around_box(&prev.gt, aug.template_margin),
        cfg.n_template,
        &mut rng,
    );
    let (dx, dy, dyaw) = if aug.enabled {
        let j = aug.jitter_xy;
        let a = aug.jitter_yaw_deg.to_radians();
        (rng.gen_range(-j..=j), rng.gen_range(-j..=j), rng.gen_range(-a..=a))
    } else {
        (0.0, 0.0, 0.0)
    };
    let g = cur.gt;
    let search_ref = Box3D::new([g.center[0] + dx, g.center[1] + dy, g.center[2]], g.size, g.yaw + dyaw);
    let search = crop_and_sample(
        &cur.cloud,
        &CropRegion::search(&search_ref, aug.search_margin, &cfg.bev_grid),
        cfg.n_search,
        &mut rng,
    );
    if template.degenerate || search.degenerate {
        return Ok(None);
    }
    let gt_local = g.in_frame_of(&search_ref);
    let targets = make_bev_targets(&gt_local, &cfg.bev_grid, search.cloud.coords())?;
    Ok(Some(TrainingPair {
        template: template.cloud,
        search: search.cloud,
        search_ref,
        gt_local,
        targets,
    }))
}
