//! Point-cloud primitives: sampling, neighborhoods, interpolation and BEV projection.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Points in meters with optional per-point features of a fixed width.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct PointCloud {
    coords: Vec<[f64; 3]>,
    feat_dim: usize,
    feats: Vec<f64>,
}

impl PointCloud {
    pub fn new(coords: Vec<[f64; 3]>) -> Self {
        PointCloud {
            coords,
            feat_dim: 0,
            feats: Vec::new(),
        }
    }

    pub fn with_feats(coords: Vec<[f64; 3]>, feat_dim: usize, feats: Vec<f64>) -> Result<Self> {
        if feats.len() != coords.len() * feat_dim {
            return Err(Error::Shape(format!(
                "{} points with {feat_dim}-dim features need {} values, got {}",
                coords.len(),
                coords.len() * feat_dim,
                feats.len()
            )));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Domain("non-finite point coordinate".into()));
        }
        Ok(PointCloud {
            coords,
            feat_dim,
            feats,
        })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn coords(&self) -> &[[f64; 3]] {
        &self.coords
    }

    pub fn feat_dim(&self) -> usize {
        self.feat_dim
    }

    pub fn feats(&self) -> &[f64] {
        &self.feats
    }

    pub fn feat(&self, i: usize) -> &[f64] {
        &self.feats[i * self.feat_dim..(i + 1) * self.feat_dim]
    }

    pub fn map_coords(&self, f: impl Fn([f64; 3]) -> [f64; 3]) -> PointCloud {
        PointCloud {
            coords: self.coords.iter().map(|&p| f(p)).collect(),
            feat_dim: self.feat_dim,
            feats: self.feats.clone(),
        }
    }

    /// Points at `indices`, in that order, with their features.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let mut feats = Vec::with_capacity(indices.len() * self.feat_dim);
        for &i in indices {
            feats.extend_from_slice(self.feat(i));
        }
        PointCloud {
            coords: indices.iter().map(|&i| self.coords[i]).collect(),
            feat_dim: self.feat_dim,
            feats,
        }
    }

    pub fn coords_tensor(&self) -> Tensor {
        Tensor::new(&[self.len(), 3], self.coords.iter().flatten().copied().collect())
            .expect("non-empty cloud")
    }
}

fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

/// Greedy max-min subset of `k` indices, starting at `start`. Each step picks the
/// point farthest from the selected set; ties go to the lowest index.
pub fn farthest_point_sample(coords: &[[f64; 3]], k: usize, start: usize) -> Result<Vec<usize>> {
    let n = coords.len();
    if k > n {
        return Err(Error::Invalid(format!("cannot sample {k} of {n} points")));
    }
    if k == 0 {
        return Ok(Vec::new());
    }
    if start >= n {
        return Err(Error::Index { index: start, len: n });
    }
    let mut selected = Vec::with_capacity(k);
    let mut min_d = vec![f64::INFINITY; n];
    let mut cur = start;
    selected.push(cur);
    while selected.len() < k {
        let c = coords[cur];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in coords.iter().enumerate() {
            let d = dist2(p, &c);
            if d < min_d[i] {
                min_d[i] = d;
            }
            if min_d[i] > best_d {
                best_d = min_d[i];
                best = i;
            }
        }
        cur = best;
        selected.push(cur);
    }
    Ok(selected)
}

/// Fixed-width neighbor lists, padded by repeating the first neighbor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NeighborIndex {
    pub max_neighbors: usize,
    /// `queries × max_neighbors` source indices.
    pub indices: Vec<usize>,
    /// Number of sources truly inside the radius (0 when the fallback was used).
    pub counts: Vec<usize>,
}

impl NeighborIndex {
    pub fn neighbors(&self, q: usize) -> &[usize] {
        &self.indices[q * self.max_neighbors..(q + 1) * self.max_neighbors]
    }

    pub fn num_queries(&self) -> usize {
        self.counts.len()
    }
}

/// Up to `max_neighbors` sources within `radius` of each query, nearest first.
/// A query with an empty ball falls back to its single nearest source.
pub fn ball_query(
    sources: &[[f64; 3]],
    queries: &[[f64; 3]],
    radius: f64,
    max_neighbors: usize,
) -> Result<NeighborIndex> {
    if sources.is_empty() {
        return Err(Error::Invalid("ball query over an empty source cloud".into()));
    }
    if !(radius > 0.0) || max_neighbors == 0 {
        return Err(Error::Invalid(format!(
            "ball query needs radius > 0 and max_neighbors > 0 (got {radius}, {max_neighbors})"
        )));
    }
    let r2 = radius * radius;
    let mut indices = Vec::with_capacity(queries.len() * max_neighbors);
    let mut counts = Vec::with_capacity(queries.len());
    let mut within: Vec<(f64, usize)> = Vec::new();
    for q in queries {
        within.clear();
        let mut nearest = (f64::INFINITY, 0usize);
        for (i, s) in sources.iter().enumerate() {
            let d = dist2(q, s);
            if d <= r2 {
                within.push((d, i));
            }
            if d < nearest.0 {
                nearest = (d, i);
            }
        }
        counts.push(within.len());
        if within.is_empty() {
            indices.extend(std::iter::repeat(nearest.1).take(max_neighbors));
            continue;
        }
        if within.len() > max_neighbors {
            within.select_nth_unstable_by(max_neighbors - 1, |a, b| a.partial_cmp(b).unwrap());
            within.truncate(max_neighbors);
        }
        within.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let first = within[0].1;
        indices.extend(within.iter().map(|&(_, i)| i));
        indices.extend(std::iter::repeat(first).take(max_neighbors - within.len()));
    }
    Ok(NeighborIndex {
        max_neighbors,
        indices,
        counts,
    })
}

/// Row gather of a `[N, D]` feature tensor.
pub fn gather(tape: &Tape, feats: Var, indices: &[usize]) -> Result<Var> {
    tape.gather_rows(feats, indices)
}

/// Distance below which a destination copies a source feature exactly.
pub const EXACT_MATCH_EPS: f64 = 1e-8;

/// Inverse-square-distance weights over the three nearest sources of every
/// destination, normalized to sum to one.
pub fn interpolation_weights(src: &[[f64; 3]], dst: &[[f64; 3]]) -> Result<Vec<Vec<(usize, f64)>>> {
    if src.is_empty() {
        return Err(Error::Invalid("feature propagation from an empty cloud".into()));
    }
    let k = src.len().min(3);
    let mut rows = Vec::with_capacity(dst.len());
    for d in dst {
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for (i, s) in src.iter().enumerate() {
            let dd = dist2(d, s);
            if best.len() < k || (dd, i) < *best.last().unwrap() {
                let pos = best.partition_point(|b| *b < (dd, i));
                best.insert(pos, (dd, i));
                best.truncate(k);
            }
        }
        if best[0].0.sqrt() < EXACT_MATCH_EPS {
            rows.push(vec![(best[0].1, 1.0)]);
            continue;
        }
        let inv: Vec<f64> = best.iter().map(|(dd, _)| 1.0 / dd).collect();
        let total: f64 = inv.iter().sum();
        rows.push(best.iter().zip(&inv).map(|(&(_, i), w)| (i, w / total)).collect());
    }
    Ok(rows)
}

/// Interpolates `[N_src, D]` features onto `dst` coordinates.
pub fn feature_propagation(
    tape: &Tape,
    src_coords: &[[f64; 3]],
    src_feats: Var,
    dst_coords: &[[f64; 3]],
) -> Result<Var> {
    let rows = interpolation_weights(src_coords, dst_coords)?;
    tape.sparse_mix(src_feats, &rows)
}

/// Axis-aligned BEV raster over a canonical search frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BevGrid {
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    pub z_range: (f64, f64),
    pub pixel_size: f64,
    pub nx: usize,
    pub ny: usize,
}

impl BevGrid {
    pub fn new(x_range: (f64, f64), y_range: (f64, f64), z_range: (f64, f64), pixel_size: f64) -> Result<Self> {
        let ok = |r: (f64, f64)| r.0.is_finite() && r.1.is_finite() && r.1 > r.0;
        if !ok(x_range) || !ok(y_range) || !ok(z_range) || !(pixel_size > 0.0) {
            return Err(Error::Config(format!(
                "invalid BEV grid x{x_range:?} y{y_range:?} z{z_range:?} pixel {pixel_size}"
            )));
        }
        let nx = ((x_range.1 - x_range.0) / pixel_size).round() as usize;
        let ny = ((y_range.1 - y_range.0) / pixel_size).round() as usize;
        if nx == 0 || ny == 0 {
            return Err(Error::Config("BEV grid has no pixels".into()));
        }
        Ok(BevGrid {
            x_range,
            y_range,
            z_range,
            pixel_size,
            nx,
            ny,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let fresh = BevGrid::new(self.x_range, self.y_range, self.z_range, self.pixel_size)?;
        if fresh.nx != self.nx || fresh.ny != self.ny {
            return Err(Error::Config(format!(
                "grid pixel counts {}x{} disagree with extents ({}x{})",
                self.nx, self.ny, fresh.nx, fresh.ny
            )));
        }
        Ok(())
    }

    pub fn num_pixels(&self) -> usize {
        self.nx * self.ny
    }

    /// `(ix, iy)` of the pixel containing `(x, y)`, ignoring z.
    pub fn pixel_of_xy(&self, x: f64, y: f64) -> Option<(usize, usize)> {
        let fx = ((x - self.x_range.0) / self.pixel_size).floor();
        let fy = ((y - self.y_range.0) / self.pixel_size).floor();
        if fx < 0.0 || fy < 0.0 || fx >= self.nx as f64 || fy >= self.ny as f64 {
            return None;
        }
        Some((fx as usize, fy as usize))
    }

    /// Row-major pixel index `iy·nx + ix` of a point inside all three ranges.
    pub fn cell_of(&self, p: [f64; 3]) -> Option<usize> {
        if p[2] < self.z_range.0 || p[2] > self.z_range.1 {
            return None;
        }
        self.pixel_of_xy(p[0], p[1]).map(|(ix, iy)| iy * self.nx + ix)
    }

    pub fn pixel_center(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.x_range.0 + (ix as f64 + 0.5) * self.pixel_size,
            self.y_range.0 + (iy as f64 + 0.5) * self.pixel_size,
        )
    }
}

/// Differentiable BEV projection of point features `[N, D]` into `[D, ny, nx]`
/// plus the occupancy mask (row-major pixels).
pub fn voxelize_bev(tape: &Tape, feats: Var, coords: &[[f64; 3]], grid: &BevGrid) -> Result<(Var, Vec<bool>)> {
    let cells: Vec<Option<usize>> = coords.iter().map(|&p| grid.cell_of(p)).collect();
    let mut mask = vec![false; grid.num_pixels()];
    for c in cells.iter().flatten() {
        mask[*c] = true;
    }
    let flat = tape.scatter_max(feats, &cells, grid.num_pixels())?;
    let d = tape.shape(flat)[0];
    Ok((tape.reshape(flat, &[d, grid.ny, grid.nx])?, mask))
}

/// BEV projection of a featured cloud, outside any gradient tape.
pub fn voxelize_cloud(cloud: &PointCloud, grid: &BevGrid) -> Result<(Tensor, Vec<bool>)> {
    if cloud.feat_dim() == 0 {
        return Err(Error::Invalid("voxelize_cloud needs per-point features".into()));
    }
    if cloud.is_empty() {
        return Ok((
            Tensor::zeros(&[cloud.feat_dim(), grid.ny, grid.nx]),
            vec![false; grid.num_pixels()],
        ));
    }
    let tape = Tape::inference();
    let feats = tape.constant(Tensor::new(&[cloud.len(), cloud.feat_dim()], cloud.feats().to_vec())?);
    let (map, mask) = voxelize_bev(&tape, feats, cloud.coords(), grid)?;
    Ok(((*tape.value(map)).clone(), mask))
}
