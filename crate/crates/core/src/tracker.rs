//! Region cropping, box decoding and the one-pass tracking loop.

use std::sync::Arc;
use std::time::Instant;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Frame, Sequence};
use crate::error::Result;
use crate::geometry::Box3D;
use crate::model::{predict, ForwardOptions, HeadOutputs, ModelConfig, ModelParams};
use crate::points::{BevGrid, PointCloud};

/// Axis-aligned crop in the canonical frame of `reference`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CropRegion {
    pub reference: Box3D,
    /// Half-extents along canonical x and y.
    pub half_extent: [f64; 2],
    pub z_range: (f64, f64),
}

impl CropRegion {
    /// The box itself plus `margin` on every side.
    pub fn around_box(b: &Box3D, margin: f64) -> Self {
        CropRegion {
            reference: *b,
            half_extent: [b.size[0] / 2.0 + margin, b.size[1] / 2.0 + margin],
            z_range: (-b.size[2] / 2.0 - margin, b.size[2] / 2.0 + margin),
        }
    }

    /// Search region: `margin` in x/y around the box, vertical extent of the grid.
    pub fn search(b: &Box3D, margin: f64, grid: &BevGrid) -> Self {
        CropRegion {
            reference: *b,
            half_extent: [b.size[0] / 2.0 + margin, b.size[1] / 2.0 + margin],
            z_range: grid.z_range,
        }
    }

    pub fn contains_local(&self, q: [f64; 3]) -> bool {
        q[0].abs() <= self.half_extent[0]
            && q[1].abs() <= self.half_extent[1]
            && q[2] >= self.z_range.0
            && q[2] <= self.z_range.1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Crop {
    /// Exactly `n_points` points in the canonical frame of the region.
    pub cloud: PointCloud,
    /// Set when no point fell inside the region.
    pub degenerate: bool,
    /// Number of distinct input points inside the region.
    pub interior: usize,
}

/// Keeps the points inside `region`, canonicalizes them and resamples to `n_points`.
///
/// Too many points are subsampled without replacement. Too few keep every point
/// once and fill up with random repeats. An empty crop is the origin repeated.
pub fn crop_and_sample(cloud: &PointCloud, region: &CropRegion, n_points: usize, rng: &mut impl Rng) -> Crop {
    assert!(n_points > 0, "crop_and_sample needs n_points > 0");
    let inside: Vec<[f64; 3]> = cloud
        .coords()
        .iter()
        .map(|&p| region.reference.to_local(p))
        .filter(|&q| region.contains_local(q))
        .collect();
    let interior = inside.len();
    if interior == 0 {
        return Crop {
            cloud: PointCloud::new(vec![[0.0; 3]; n_points]),
            degenerate: true,
            interior,
        };
    }
    let coords = if interior >= n_points {
        let mut idx = sample(rng, interior, n_points).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| inside[i]).collect()
    } else {
        let mut out = inside.clone();
        while out.len() < n_points {
            out.push(inside[rng.gen_range(0..interior)]);
        }
        out
    };
    Crop {
        cloud: PointCloud::new(coords),
        degenerate: false,
        interior,
    }
}

/// Peak pixel over occupied cells, ties to the lowest row-major index.
pub fn peak_pixel(head: &HeadOutputs) -> Option<usize> {
    let heat = head.heatmap.data();
    let mut best: Option<(usize, f64)> = None;
    for (i, (&h, &occ)) in heat.iter().zip(&head.occupancy).enumerate() {
        if occ && best.map_or(true, |(_, b)| h > b) {
            best = Some((i, h));
        }
    }
    best.map(|(i, _)| i)
}

/// World box from the head outputs of a search region canonicalized at `reference`.
/// The size is carried over from the template; with nothing occupied, `reference` is returned.
pub fn decode_box(head: &HeadOutputs, grid: &BevGrid, reference: &Box3D, size: [f64; 3]) -> Box3D {
    let Some(pix) = peak_pixel(head) else {
        return *reference;
    };
    let (ix, iy) = (pix % grid.nx, pix / grid.nx);
    let (px, py) = grid.pixel_center(ix, iy);
    let plane = grid.num_pixels();
    let off = head.offset_rot.data();
    let local = Box3D::new(
        [px + off[pix], py + off[plane + pix], head.zmap.data()[pix]],
        size,
        off[2 * plane + pix],
    );
    local.from_frame_of(reference)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TemplateMode {
    /// Crop of the first-frame ground truth, never updated.
    First,
    /// Crop of the previous prediction in the previous frame.
    Previous,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackerConfig {
    pub template: TemplateMode,
    pub search_margin: f64,
    pub template_margin: f64,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        TrackerConfig {
            template: TemplateMode::First,
            search_margin: 2.0,
            template_margin: 0.05,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackResult {
    pub seq: String,
    pub boxes: Vec<Box3D>,
    /// Wall time per frame in milliseconds (frame 0 is 0).
    pub ms: Vec<f64>,
}

/// One line of the JSON-lines track output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackRecord {
    pub seq: String,
    pub frame: usize,
    #[serde(rename = "box")]
    pub bbox: [f64; 7],
    pub ms: f64,
}

impl TrackResult {
    pub fn records(&self) -> Vec<TrackRecord> {
        self.boxes
            .iter()
            .zip(&self.ms)
            .enumerate()
            .map(|(frame, (b, &ms))| TrackRecord {
                seq: self.seq.clone(),
                frame,
                bbox: b.to_array(),
                ms,
            })
            .collect()
    }

    /// Regroups records by sequence id, in order of first appearance.
    pub fn from_records(records: &[TrackRecord]) -> Result<Vec<TrackResult>> {
        let mut out: Vec<TrackResult> = Vec::new();
        for r in records {
            let pos = match out.iter().position(|t| t.seq == r.seq) {
                Some(p) => p,
                None => {
                    out.push(TrackResult {
                        seq: r.seq.clone(),
                        boxes: Vec::new(),
                        ms: Vec::new(),
                    });
                    out.len() - 1
                }
            };
            let t = &mut out[pos];
            if r.frame != t.boxes.len() {
                return Err(crate::Error::Invalid(format!(
                    "sequence `{}`: frame {} out of order (expected {})",
                    r.seq,
                    r.frame,
                    t.boxes.len()
                )));
            }
            t.boxes.push(Box3D::from_array(r.bbox));
            t.ms.push(r.ms);
        }
        Ok(out)
    }
}

/// Seed for the crop sampler of one frame.
pub fn frame_seed(seed: u64, seq_id: &str, frame: usize) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in seq_id.bytes() {
        h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
    }
    h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ (frame as u64).wrapping_mul(0xbf58_476d_1ce4_e5b9)
}

/// Template crop around `b` in `frame`, canonicalized at `b`.
pub fn template_crop(frame: &Frame, b: &Box3D, cfg: &TrackerConfig, n: usize, rng: &mut impl Rng) -> Crop {
    crop_and_sample(&frame.cloud, &CropRegion::around_box(b, cfg.template_margin), n, rng)
}

/// Tracks `seq` from its first-frame ground truth.
pub fn track_sequence(params: &ModelParams, mcfg: &ModelConfig, tcfg: &TrackerConfig, seq: &Sequence) -> Result<TrackResult> {
    track_sequence_with(params, mcfg, tcfg, seq, |_, crop| crop)
}

/// Frame-by-frame tracking state, seeded by a first frame and its box.
#[derive(Clone, Debug)]
pub struct OnlineTracker {
    pub cfg: TrackerConfig,
    seq_id: String,
    first: Frame,
    prev: Frame,
    template: Option<PointCloud>,
    frame: usize,
}

impl OnlineTracker {
    /// `seq_id` only seeds the per-frame sampling.
    pub fn new(cfg: TrackerConfig, seq_id: &str, first: Frame) -> Self {
        OnlineTracker {
            cfg,
            seq_id: seq_id.to_string(),
            prev: first.clone(),
            first,
            template: None,
            frame: 0,
        }
    }

    /// Index of the last frame seen.
    pub fn frame(&self) -> usize {
        self.frame
    }

    pub fn last_box(&self) -> Box3D {
        self.prev.gt
    }

    pub fn update(&mut self, params: &ModelParams, mcfg: &ModelConfig, cloud: Arc<PointCloud>) -> Result<Box3D> {
        self.update_with(params, mcfg, cloud, |_, crop| crop)
    }

    /// Predicts the box in the next frame; `template_hook` may rewrite the template crop.
    pub fn update_with(
        &mut self,
        params: &ModelParams,
        mcfg: &ModelConfig,
        cloud: Arc<PointCloud>,
        template_hook: impl Fn(usize, PointCloud) -> PointCloud,
    ) -> Result<Box3D> {
        let t = self.frame + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(frame_seed(self.cfg.seed, &self.seq_id, t));
        let prev = self.prev.gt;
        let tmpl = match (self.cfg.template, &self.template) {
            (TemplateMode::First, Some(c)) => c.clone(),
            (TemplateMode::First, None) => {
                let crop = template_crop(&self.first, &self.first.gt, &self.cfg, mcfg.n_template, &mut rng);
                let c = template_hook(t, crop.cloud);
                self.template = Some(c.clone());
                c
            }
            (TemplateMode::Previous, _) => {
                template_hook(t, template_crop(&self.prev, &prev, &self.cfg, mcfg.n_template, &mut rng).cloud)
            }
        };
        let region = CropRegion::search(&prev, self.cfg.search_margin, &mcfg.bev_grid);
        let search = crop_and_sample(&cloud, &region, mcfg.n_search, &mut rng);
        let pred = if search.degenerate {
            prev
        } else {
            let head = predict(params, mcfg, tmpl.coords(), search.cloud.coords(), ForwardOptions::default())?;
            decode_box(&head, &mcfg.bev_grid, &prev, self.first.gt.size)
        };
        self.prev = Frame { cloud, gt: pred };
        self.frame = t;
        Ok(pred)
    }
}

/// [`track_sequence`] with a hook that may rewrite each template crop.
pub fn track_sequence_with(
    params: &ModelParams,
    mcfg: &ModelConfig,
    tcfg: &TrackerConfig,
    seq: &Sequence,
    template_hook: impl Fn(usize, PointCloud) -> PointCloud,
) -> Result<TrackResult> {
    seq.validate()?;
    let mut tracker = OnlineTracker::new(tcfg.clone(), &seq.id, seq.frames[0].clone());
    let mut boxes = vec![seq.frames[0].gt];
    let mut ms = vec![0.0];
    for f in &seq.frames[1..] {
        let start = Instant::now();
        boxes.push(tracker.update_with(params, mcfg, f.cloud.clone(), &template_hook)?);
        ms.push((start.elapsed().as_secs_f64() * 1e3).max(f64::MIN_POSITIVE));
    }
    Ok(TrackResult {
        seq: seq.id.clone(),
        boxes,
        ms,
    })
}
