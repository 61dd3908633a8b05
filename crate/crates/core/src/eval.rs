//! Success/Precision metrics, class-agnostic evaluation and cost accounting.

use std::collections::BTreeSet;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{dataset_splits, SceneSplit, Sequence, SplitSetting};
use crate::error::{Error, Result};
use crate::geometry::{box_iou_3d, center_distance};
use crate::model::{predict, ForwardOptions, ModelConfig, ModelParams, TRUNK_LAYERS};
use crate::tracker::{track_sequence, TrackResult, TrackerConfig};

/// Number of uniformly spaced thresholds on each curve.
pub const CURVE_POINTS: usize = 101;
/// Upper end of the center-distance thresholds in meters.
pub const MAX_DISTANCE: f64 = 2.0;
/// Slack on threshold comparisons so exact hits survive rounding.
pub const THRESHOLD_SLACK: f64 = 1e-9;

pub fn overlap_thresholds() -> Vec<f64> {
    (0..CURVE_POINTS).map(|k| k as f64 / (CURVE_POINTS - 1) as f64).collect()
}

pub fn distance_thresholds() -> Vec<f64> {
    (0..CURVE_POINTS)
        .map(|k| MAX_DISTANCE * k as f64 / (CURVE_POINTS - 1) as f64)
        .collect()
}

/// Fraction of frames whose overlap is positive and at least each threshold.
pub fn success_curve(ious: &[f64]) -> Vec<f64> {
    let n = ious.len().max(1) as f64;
    overlap_thresholds()
        .iter()
        .map(|&t| ious.iter().filter(|&&u| u > 0.0 && u >= t - THRESHOLD_SLACK).count() as f64 / n)
        .collect()
}

/// Fraction of frames whose center error is at most each threshold.
pub fn precision_curve(dists: &[f64]) -> Vec<f64> {
    let n = dists.len().max(1) as f64;
    distance_thresholds()
        .iter()
        .map(|&t| dists.iter().filter(|&&d| d <= t + THRESHOLD_SLACK).count() as f64 / n)
        .collect()
}

/// Uniform-measure area under a curve sampled on the threshold grid, in percent.
pub fn curve_score(curve: &[f64]) -> f64 {
    100.0 * curve.iter().sum::<f64>() / curve.len() as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceMetrics {
    pub id: String,
    pub frames: usize,
    pub success: f64,
    pub precision: f64,
    pub success_curve: Vec<f64>,
    pub precision_curve: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub success: f64,
    pub precision: f64,
    /// Frames scored, pooled over sequences (first frames excluded).
    pub frames: usize,
    pub success_curve: Vec<f64>,
    pub precision_curve: Vec<f64>,
    pub sequences: Vec<SequenceMetrics>,
}

/// Per-frame overlaps and center errors of one prediction against its sequence.
pub fn frame_errors(pred: &TrackResult, gt: &Sequence) -> Result<(Vec<f64>, Vec<f64>)> {
    if pred.boxes.len() != gt.frames.len() {
        return Err(Error::Invalid(format!(
            "sequence `{}`: {} predictions for {} frames",
            gt.id,
            pred.boxes.len(),
            gt.frames.len()
        )));
    }
    let pairs = pred.boxes.iter().zip(&gt.frames).skip(1);
    Ok(pairs.map(|(p, f)| (box_iou_3d(p, &f.gt), center_distance(p, &f.gt))).unzip())
}

/// Pooled Success/Precision; predictions are matched to sequences by id.
pub fn evaluate(preds: &[TrackResult], gts: &[Sequence]) -> Result<MetricReport> {
    let mut all_iou = Vec::new();
    let mut all_dist = Vec::new();
    let mut sequences = Vec::with_capacity(gts.len());
    for gt in gts {
        let pred = preds
            .iter()
            .find(|p| p.seq == gt.id)
            .ok_or_else(|| Error::Invalid(format!("no prediction for sequence `{}`", gt.id)))?;
        let (ious, dists) = frame_errors(pred, gt)?;
        let (sc, pc) = (success_curve(&ious), precision_curve(&dists));
        sequences.push(SequenceMetrics {
            id: gt.id.clone(),
            frames: ious.len(),
            success: curve_score(&sc),
            precision: curve_score(&pc),
            success_curve: sc,
            precision_curve: pc,
        });
        all_iou.extend(ious);
        all_dist.extend(dists);
    }
    if all_iou.is_empty() {
        return Err(Error::Invalid("no frames to evaluate".into()));
    }
    let (sc, pc) = (success_curve(&all_iou), precision_curve(&all_dist));
    Ok(MetricReport {
        success: curve_score(&sc),
        precision: curve_score(&pc),
        frames: all_iou.len(),
        success_curve: sc,
        precision_curve: pc,
        sequences,
    })
}

/// Worker count: `OST_THREADS` if set to a positive integer, else all cores.
pub fn worker_count() -> usize {
    std::env::var("OST_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` on a pool capped at [`worker_count`] threads.
pub fn with_workers<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(worker_count()).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Tracks every sequence (in parallel) and returns results in input order.
pub fn track_all(
    params: &ModelParams,
    mcfg: &ModelConfig,
    tcfg: &TrackerConfig,
    seqs: &[&Sequence],
) -> Result<Vec<TrackResult>> {
    with_workers(|| seqs.par_iter().map(|s| track_sequence(params, mcfg, tcfg, s)).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassAgnosticReport {
    pub setting: String,
    pub observed: Option<MetricReport>,
    pub unseen: Option<MetricReport>,
}

/// Evaluates a model on the observed-test and unseen-test pools of `setting`.
/// `trained_on` lists the categories the model saw; any unseen category among them
/// is a hard error.
pub fn run_class_agnostic(
    setting: &SplitSetting,
    trained_on: &BTreeSet<String>,
    params: &ModelParams,
    mcfg: &ModelConfig,
    tcfg: &TrackerConfig,
    seqs: &[Sequence],
    scenes: &SceneSplit,
) -> Result<ClassAgnosticReport> {
    if let Some(c) = trained_on.iter().find(|c| setting.unseen.contains(c)) {
        return Err(Error::Leakage(format!(
            "unseen category `{c}` appears in the training manifest of {}",
            setting.name
        )));
    }
    let splits = dataset_splits(setting, seqs, scenes)?;
    let pool = |idx: &[usize]| -> Result<Option<MetricReport>> {
        if idx.is_empty() {
            return Ok(None);
        }
        let chosen: Vec<&Sequence> = idx.iter().map(|&i| &seqs[i]).collect();
        let preds = track_all(params, mcfg, tcfg, &chosen)?;
        let gts: Vec<Sequence> = chosen.into_iter().cloned().collect();
        evaluate(&preds, &gts).map(Some)
    };
    Ok(ClassAgnosticReport {
        setting: setting.name.clone(),
        observed: pool(&splits.observed_test)?,
        unseen: pool(&splits.unseen_test)?,
    })
}

/// FLOPs of one forward pass by component; a multiply-add counts as two.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FlopBreakdown {
    pub gcn: u64,
    pub ttm: u64,
    pub mfa: u64,
    pub seg: u64,
    pub head: u64,
}

impl FlopBreakdown {
    pub fn total(&self) -> u64 {
        self.gcn + self.ttm + self.mfa + self.seg + self.head
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub params: u64,
    pub flops: u64,
    pub breakdown: FlopBreakdown,
    pub ms_per_frame: f64,
    pub fps: f64,
}

fn linear_params(din: u64, dout: u64) -> u64 {
    din * dout + dout
}

fn linear_flops(rows: u64, din: u64, dout: u64) -> u64 {
    2 * rows * din * dout + rows * dout
}

fn conv_flops(cin: u64, cout: u64, k: u64, h: u64, w: u64) -> u64 {
    2 * cin * k * k * cout * h * w + cout * h * w
}

/// Parameters summed from the layer shapes implied by `cfg`.
pub fn count_params(cfg: &ModelConfig) -> u64 {
    let d = cfg.feat_dim as u64;
    let hidden = (cfg.ffn_mult * cfg.feat_dim) as u64;
    let c = cfg.bev_channels() as u64;
    let gcn: u64 = (0..cfg.gcn_layers)
        .map(|l| (if l > 0 { d * d } else { 0 }) + 3 * d + d + linear_params(d, d))
        .sum();
    let ttm = cfg.ttm_layers as u64
        * (linear_params(3, d)
            + linear_params(d, d)
            + 4 * linear_params(d, d)
            + linear_params(d, hidden)
            + linear_params(hidden, d)
            + 4 * d);
    let mfa = (cfg.ttm_layers as u64 - 1) * linear_params(2 * d, d);
    let seg = linear_params(d, d) + linear_params(d, 1);
    let trunk: u64 = (0..TRUNK_LAYERS)
        .map(|l| (if l == 0 { c } else { d }) * d * 9 + d)
        .sum();
    let branches = (d + 1) + (3 * d + 3) + (d + 1);
    gcn + ttm + mfa + seg + trunk + branches
}

/// Closed-form FLOP count of one forward pass.
pub fn count_flops(cfg: &ModelConfig) -> FlopBreakdown {
    let d = cfg.feat_dim as u64;
    let hidden = (cfg.ffn_mult * cfg.feat_dim) as u64;
    let k = cfg.gcn_neighbors as u64;
    let (nt, ns) = (cfg.n_template as u64, cfg.n_search as u64);
    let gcn_cloud = |n: u64| -> u64 {
        (0..cfg.gcn_layers)
            .map(|l| {
                let feat = if l > 0 { 2 * n * d * d + n * k * d } else { 0 };
                linear_flops(n * k, 3, d) + feat + linear_flops(n, d, d)
            })
            .sum()
    };
    let n = nt + ns;
    let per_layer = linear_flops(n, 3, d)
        + linear_flops(n, d, d)
        + 4 * linear_flops(n, d, d)
        + 2 * 2 * n * n * d
        + linear_flops(n, d, hidden)
        + linear_flops(n, hidden, d);
    let sizes = cfg.layer_sizes();
    let mut chain = sizes.clone();
    if cfg.mfa_direction == crate::model::MfaDirection::Usual {
        chain.reverse();
    }
    let mfa: u64 = chain
        .windows(2)
        .map(|w| 2 * 3 * d * w[1] as u64 + linear_flops(w[1] as u64, 2 * d, d))
        .sum();
    let seg = linear_flops(ns, d, d) + linear_flops(ns, d, 1);
    let (h, w) = (cfg.bev_grid.ny as u64, cfg.bev_grid.nx as u64);
    let c = cfg.bev_channels() as u64;
    let trunk: u64 = (0..TRUNK_LAYERS)
        .map(|l| conv_flops(if l == 0 { c } else { d }, d, 3, h, w))
        .sum();
    let head = trunk + conv_flops(d, 1, 1, h, w) + conv_flops(d, 3, 1, h, w) + conv_flops(d, 1, 1, h, w);
    FlopBreakdown {
        gcn: gcn_cloud(nt) + gcn_cloud(ns),
        ttm: cfg.ttm_layers as u64 * per_layer,
        mfa,
        seg,
        head,
    }
}

/// Analytic counts plus mean wall time over `forwards` timed passes after one warm-up.
pub fn count_params_flops(cfg: &ModelConfig, params: &ModelParams, forwards: usize) -> Result<CostReport> {
    let breakdown = count_flops(cfg);
    let template: Vec<[f64; 3]> = (0..cfg.n_template)
        .map(|i| {
            let a = i as f64 * 0.618;
            [a.cos(), a.sin(), (i % 7) as f64 * 0.1 - 0.3]
        })
        .collect();
    let search: Vec<[f64; 3]> = (0..cfg.n_search)
        .map(|i| {
            let a = i as f64 * 0.382;
            [2.0 * a.cos(), 2.0 * a.sin(), (i % 5) as f64 * 0.1 - 0.2]
        })
        .collect();
    predict(params, cfg, &template, &search, ForwardOptions::default())?;
    let forwards = forwards.max(1);
    let start = Instant::now();
    for _ in 0..forwards {
        predict(params, cfg, &template, &search, ForwardOptions::default())?;
    }
    let ms = start.elapsed().as_secs_f64() * 1e3 / forwards as f64;
    Ok(CostReport {
        params: count_params(cfg),
        flops: breakdown.total(),
        breakdown,
        ms_per_frame: ms,
        fps: 1e3 / ms,
    })
}
