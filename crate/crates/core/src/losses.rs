//! Training targets and losses of the BEV head and the segmentation branch.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{point_in_box, Box3D};
use crate::model::ModelOutput;
use crate::points::BevGrid;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_seg: f64,
    pub lambda_center: f64,
    pub lambda_offset: f64,
    pub lambda_z: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Half-width in pixels of the offset regression window.
    pub radius: usize,
    pub eps_clip: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_seg: 1.0,
            lambda_center: 1.0,
            lambda_offset: 1.0,
            lambda_z: 2.0,
            alpha: 2.0,
            beta: 4.0,
            radius: 2,
            eps_clip: 1e-6,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        let lambdas = [self.lambda_seg, self.lambda_center, self.lambda_offset, self.lambda_z];
        if lambdas.iter().any(|l| !(*l >= 0.0)) || !(self.alpha > 0.0) || !(self.beta > 0.0) {
            return Err(Error::Config("loss weights must be >= 0 and alpha, beta > 0".into()));
        }
        if !(self.eps_clip > 0.0 && self.eps_clip < 0.5) {
            return Err(Error::Config(format!("eps_clip {} outside (0, 0.5)", self.eps_clip)));
        }
        Ok(())
    }
}

/// Supervision for one search region in its canonical frame.
#[derive(Clone, Debug, PartialEq)]
pub struct BevTargets {
    /// `[ny, nx]` three-case centerness field.
    pub heatmap: Tensor,
    /// `(ix, iy)` pixel containing the box center.
    pub center_pixel: (usize, usize),
    /// Continuous BEV center in meters.
    pub center: [f64; 2],
    pub yaw: f64,
    pub z: f64,
    pub seg_labels: Vec<bool>,
}

/// Heatmap value of a pixel at pixel distance `d` from the center pixel.
pub fn heat_value(is_center: bool, in_box: bool, d: f64) -> f64 {
    if is_center {
        1.0
    } else if in_box {
        1.0 / (1.0 + d)
    } else {
        0.0
    }
}

pub fn make_bev_targets(gt: &Box3D, grid: &BevGrid, search: &[[f64; 3]]) -> Result<BevTargets> {
    let (cx, cy) = grid.pixel_of_xy(gt.center[0], gt.center[1]).ok_or_else(|| {
        Error::Domain(format!(
            "box center ({:.3}, {:.3}) outside the BEV grid",
            gt.center[0], gt.center[1]
        ))
    })?;
    let (c, s) = (gt.yaw.cos(), gt.yaw.sin());
    let mut heat = vec![0.0; grid.num_pixels()];
    for iy in 0..grid.ny {
        for ix in 0..grid.nx {
            let (px, py) = grid.pixel_center(ix, iy);
            let (dx, dy) = (px - gt.center[0], py - gt.center[1]);
            let lx = c * dx + s * dy;
            let ly = -s * dx + c * dy;
            let in_box = lx.abs() <= gt.size[0] / 2.0 && ly.abs() <= gt.size[1] / 2.0;
            let d = ((ix as f64 - cx as f64).powi(2) + (iy as f64 - cy as f64).powi(2)).sqrt();
            heat[iy * grid.nx + ix] = heat_value((ix, iy) == (cx, cy), in_box, d);
        }
    }
    Ok(BevTargets {
        heatmap: Tensor::new(&[grid.ny, grid.nx], heat)?,
        center_pixel: (cx, cy),
        center: [gt.center[0], gt.center[1]],
        yaw: gt.yaw,
        z: gt.center[2],
        seg_labels: search.iter().map(|&p| point_in_box(p, gt)).collect(),
    })
}

/// Penalty-reduced pixelwise focal loss, summed over the map.
pub fn focal_loss(tape: &Tape, pred: Var, target: &Tensor, alpha: f64, beta: f64, eps: f64) -> Result<Var> {
    if tape.shape(pred) != target.shape() {
        return Err(Error::Shape(format!(
            "focal_loss: prediction {:?} vs target {:?}",
            tape.shape(pred),
            target.shape()
        )));
    }
    let shape = target.shape();
    let pos: Vec<f64> = target.data().iter().map(|&h| if h == 1.0 { 1.0 } else { 0.0 }).collect();
    let neg: Vec<f64> = target
        .data()
        .iter()
        .map(|&h| if h == 1.0 { 0.0 } else { (1.0 - h).powf(beta) })
        .collect();
    let p = tape.clamp(pred, eps, 1.0 - eps);
    let q = tape.add_scalar(tape.neg(p), 1.0);
    let pos_term = tape.mul(tape.powf(q, alpha), tape.log(p)?)?;
    let neg_term = tape.mul(tape.powf(p, alpha), tape.log(q)?)?;
    let pos_term = tape.mul(pos_term, tape.constant(Tensor::new(shape, pos)?))?;
    let neg_term = tape.mul(neg_term, tape.constant(Tensor::new(shape, neg)?))?;
    Ok(tape.neg(tape.sum_all(tape.add(pos_term, neg_term)?)))
}

/// Window pixels `(ix, iy)` around the center pixel, truncated at the grid border.
pub fn offset_window(center: (usize, usize), r: usize, grid: &BevGrid) -> Vec<(usize, usize)> {
    let (cx, cy) = (center.0 as i64, center.1 as i64);
    let r = r as i64;
    let mut out = Vec::new();
    for gamma in -r..=r {
        for delta in -r..=r {
            let (ix, iy) = (cx + delta, cy + gamma);
            if ix >= 0 && iy >= 0 && (ix as usize) < grid.nx && (iy as usize) < grid.ny {
                out.push((ix as usize, iy as usize));
            }
        }
    }
    out
}

/// L1 over the window between `[dx, dy, yaw]` predictions and the center offsets.
pub fn offset_loss(tape: &Tape, offset_rot: Var, targets: &BevTargets, r: usize, grid: &BevGrid) -> Result<Var> {
    if tape.shape(offset_rot) != [3, grid.ny, grid.nx] {
        return Err(Error::Shape(format!("offset map {:?}", tape.shape(offset_rot))));
    }
    let plane = grid.num_pixels();
    let mut flat = Vec::new();
    let mut want = Vec::new();
    for (ix, iy) in offset_window(targets.center_pixel, r, grid) {
        let (px, py) = grid.pixel_center(ix, iy);
        let pix = iy * grid.nx + ix;
        flat.extend_from_slice(&[pix, plane + pix, 2 * plane + pix]);
        want.extend_from_slice(&[targets.center[0] - px, targets.center[1] - py, targets.yaw]);
    }
    let picked = tape.take(offset_rot, &flat)?;
    let diff = tape.sub(picked, tape.constant(Tensor::vector(want)))?;
    Ok(tape.sum_all(tape.abs(diff)))
}

/// `|Ẑ(c̃) - z|` read at the center pixel only.
pub fn zaxis_loss(tape: &Tape, zmap: Var, center: (usize, usize), z: f64) -> Result<Var> {
    let nx = tape.shape(zmap)[1];
    let at = tape.take(zmap, &[center.1 * nx + center.0])?;
    Ok(tape.sum_all(tape.abs(tape.add_scalar(at, -z))))
}

/// Mean binary cross-entropy of per-point scores.
pub fn seg_loss(tape: &Tape, scores: Var, labels: &[bool], eps: f64) -> Result<Var> {
    let n = labels.len();
    if tape.shape(scores) != [n] {
        return Err(Error::Shape(format!("seg_loss: scores {:?} for {n} labels", tape.shape(scores))));
    }
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let s = tape.clamp(scores, eps, 1.0 - eps);
    let pos = tape.mul(tape.log(s)?, tape.constant(Tensor::vector(y.clone())))?;
    let q = tape.add_scalar(tape.neg(s), 1.0);
    let yn: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
    let neg = tape.mul(tape.log(q)?, tape.constant(Tensor::vector(yn)))?;
    Ok(tape.neg(tape.mean_all(tape.add(pos, neg)?)))
}

/// The four loss terms and their weighted total.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub seg: Var,
    pub center: Var,
    pub offset: Var,
    pub z: Var,
    pub total: Var,
}

/// Scalar values of [`LossTerms`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossValues {
    pub seg: f64,
    pub center: f64,
    pub offset: f64,
    pub z: f64,
    pub total: f64,
}

impl LossTerms {
    pub fn values(&self, tape: &Tape) -> LossValues {
        let v = |x: Var| tape.value(x).item();
        LossValues {
            seg: v(self.seg),
            center: v(self.center),
            offset: v(self.offset),
            z: v(self.z),
            total: v(self.total),
        }
    }
}

/// `λ1·seg + λ2·center + λ3·offset + λ4·z`; any non-finite component is an error.
pub fn total_loss(tape: &Tape, seg: Var, center: Var, offset: Var, z: Var, cfg: &LossConfig) -> Result<Var> {
    for (name, v) in [("seg", seg), ("center", center), ("offset", offset), ("z", z)] {
        let val = tape.value(v);
        if val.numel() != 1 || !val.item().is_finite() {
            return Err(Error::Numerical(format!("{name} loss is {:?}", val.data())));
        }
    }
    let a = tape.add(tape.scale(seg, cfg.lambda_seg), tape.scale(center, cfg.lambda_center))?;
    let b = tape.add(tape.scale(offset, cfg.lambda_offset), tape.scale(z, cfg.lambda_z))?;
    tape.add(a, b)
}

pub fn compute_losses(
    tape: &Tape,
    out: &ModelOutput,
    targets: &BevTargets,
    grid: &BevGrid,
    cfg: &LossConfig,
) -> Result<LossTerms> {
    let seg = seg_loss(tape, out.seg, &targets.seg_labels, cfg.eps_clip)?;
    let center = focal_loss(tape, out.heatmap, &targets.heatmap, cfg.alpha, cfg.beta, cfg.eps_clip)?;
    let offset = offset_loss(tape, out.offset_rot, targets, cfg.radius, grid)?;
    let z = zaxis_loss(tape, out.zmap, targets.center_pixel, targets.z)?;
    let total = total_loss(tape, seg, center, offset, z, cfg)?;
    Ok(LossTerms {
        seg,
        center,
        offset,
        z,
        total,
    })
}
