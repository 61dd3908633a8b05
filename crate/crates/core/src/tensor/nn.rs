//! Fused layer primitives: affine maps, convolution, normalization and the
//! sparse gather/scatter kernels used by the point-cloud stages.

use super::kernels::{col2im, gemm, im2col, ConvGeometry};
use super::{Tape, Tensor, Var};
use crate::error::{shape_err, Error, Result};

impl Tape {
    /// `x · W + b` over the last axis of `x`; `weight` is `[D_in, D_out]`.
    pub fn linear(&self, x: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let [xv, wv] = self.values([x, weight]);
        let (xs, ws) = (xv.shape(), wv.shape());
        if ws.len() != 2 || xs[xs.len() - 1] != ws[0] {
            return shape_err(format!("linear: input {xs:?} against weight {ws:?}"));
        }
        let (din, dout) = (ws[0], ws[1]);
        if let Some(b) = bias {
            let bs = self.shape(b);
            if bs != [dout] {
                return shape_err(format!("linear: bias {bs:?} for output width {dout}"));
            }
        }
        let rows = xv.numel() / din;
        let mut out = vec![0.0; rows * dout];
        if let Some(b) = bias {
            let bv = self.value(b);
            for r in out.chunks_mut(dout) {
                r.copy_from_slice(bv.data());
            }
        }
        gemm(rows, din, dout, xv.data(), false, wv.data(), false, &mut out, bias.is_some());
        let mut shape = xs.to_vec();
        *shape.last_mut().unwrap() = dout;
        let out = Tensor::from_parts(shape, out);
        let mut parents = vec![x, weight];
        parents.extend(bias);
        Ok(self.push(out, &parents, move |g, p, _| {
            let gd = g.data();
            let mut gx = vec![0.0; rows * din];
            gemm(rows, dout, din, gd, false, p[1].data(), true, &mut gx, false);
            let mut gw = vec![0.0; din * dout];
            gemm(din, rows, dout, p[0].data(), true, gd, false, &mut gw, false);
            let mut grads = vec![
                Some(Tensor::from_parts(p[0].shape().to_vec(), gx)),
                Some(Tensor::from_parts(vec![din, dout], gw)),
            ];
            if p.len() == 3 {
                let mut gb = vec![0.0; dout];
                for r in gd.chunks(dout) {
                    for (a, b) in gb.iter_mut().zip(r) {
                        *a += b;
                    }
                }
                grads.push(Some(Tensor::from_parts(vec![dout], gb)));
            }
            grads
        }))
    }

    /// 2-D cross-correlation of `[C_in, H, W]` with `[C_out, C_in, k, k]`, optional
    /// per-channel bias. Output extent is `floor((H + 2p - k) / s) + 1`.
    pub fn conv2d(
        &self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let [iv, kv] = self.values([input, kernel]);
        let (is, ks) = (iv.shape(), kv.shape());
        if is.len() != 3 || ks.len() != 4 || ks[1] != is[0] || ks[2] != ks[3] {
            return shape_err(format!("conv2d: input {is:?} against kernel {ks:?}"));
        }
        if stride == 0 {
            return Err(Error::Invalid("conv2d stride must be positive".into()));
        }
        let (c_in, h, w) = (is[0], is[1], is[2]);
        let (c_out, k) = (ks[0], ks[2]);
        if h + 2 * padding < k || w + 2 * padding < k {
            return shape_err(format!(
                "conv2d: kernel {k} larger than padded input {}x{}",
                h + 2 * padding,
                w + 2 * padding
            ));
        }
        let geo = ConvGeometry {
            c_in,
            h,
            w,
            k,
            stride,
            pad: padding,
            h_out: (h + 2 * padding - k) / stride + 1,
            w_out: (w + 2 * padding - k) / stride + 1,
        };
        if let Some(b) = bias {
            if self.shape(b) != [c_out] {
                return shape_err("conv2d: bias must be [C_out]");
            }
        }
        let cols = im2col(iv.data(), &geo);
        let npos = geo.positions();
        let rows = geo.cols_rows();
        let mut out = vec![0.0; c_out * npos];
        if let Some(b) = bias {
            for (chunk, &bv) in out.chunks_mut(npos).zip(self.value(b).data()) {
                chunk.iter_mut().for_each(|v| *v = bv);
            }
        }
        gemm(c_out, rows, npos, kv.data(), false, &cols, false, &mut out, bias.is_some());
        let out = Tensor::from_parts(vec![c_out, geo.h_out, geo.w_out], out);
        let mut parents = vec![input, kernel];
        parents.extend(bias);
        Ok(self.push(out, &parents, move |g, p, _| {
            let gd = g.data();
            let mut gk = vec![0.0; c_out * rows];
            gemm(c_out, npos, rows, gd, false, &cols, true, &mut gk, false);
            let mut gcols = vec![0.0; rows * npos];
            gemm(rows, c_out, npos, p[1].data(), true, gd, false, &mut gcols, false);
            let gi = col2im(&gcols, &geo);
            let mut grads = vec![
                Some(Tensor::from_parts(p[0].shape().to_vec(), gi)),
                Some(Tensor::from_parts(p[1].shape().to_vec(), gk)),
            ];
            if p.len() == 3 {
                grads.push(Some(Tensor::from_parts(
                    vec![c_out],
                    gd.chunks(npos).map(|c| c.iter().sum()).collect(),
                )));
            }
            grads
        }))
    }

    /// Normalizes each row of the last axis to zero mean and unit variance,
    /// then applies `gain` and `bias` (both `[D]`).
    pub fn layer_norm(&self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let [xv, gv, bv] = self.values([x, gain, bias]);
        let d = *xv.shape().last().unwrap();
        if gv.shape() != [d] || bv.shape() != [d] {
            return shape_err(format!("layer_norm: width {d} vs gain {:?}", gv.shape()));
        }
        let rows = xv.numel() / d;
        let mut xhat = vec![0.0; xv.numel()];
        let mut inv_std = vec![0.0; rows];
        let mut out = vec![0.0; xv.numel()];
        for r in 0..rows {
            let row = &xv.data()[r * d..][..d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                let xh = (row[j] - mean) * is;
                xhat[r * d + j] = xh;
                out[r * d + j] = xh * gv.data()[j] + bv.data()[j];
            }
        }
        let out = Tensor::from_parts(xv.shape().to_vec(), out);
        Ok(self.push(out, &[x, gain, bias], move |g, p, _| {
            let gd = g.data();
            let gain = p[1].data();
            let mut gx = vec![0.0; gd.len()];
            let mut gg = vec![0.0; d];
            let mut gb = vec![0.0; d];
            for r in 0..rows {
                let gr = &gd[r * d..][..d];
                let xh = &xhat[r * d..][..d];
                let mut mean_dxh = 0.0;
                let mut mean_dxh_xh = 0.0;
                for j in 0..d {
                    let dxh = gr[j] * gain[j];
                    mean_dxh += dxh;
                    mean_dxh_xh += dxh * xh[j];
                    gg[j] += gr[j] * xh[j];
                    gb[j] += gr[j];
                }
                mean_dxh /= d as f64;
                mean_dxh_xh /= d as f64;
                for j in 0..d {
                    let dxh = gr[j] * gain[j];
                    gx[r * d + j] = inv_std[r] * (dxh - mean_dxh - xh[j] * mean_dxh_xh);
                }
            }
            vec![
                Some(Tensor::from_parts(p[0].shape().to_vec(), gx)),
                Some(Tensor::from_parts(vec![d], gg)),
                Some(Tensor::from_parts(vec![d], gb)),
            ]
        }))
    }

    /// Per-cell elementwise max of point rows `x: [N, C]` into a channel-first
    /// `[C, n_cells]` map. Points with `None` are dropped; empty cells are 0.
    /// The gradient of each occupied cell channel goes to the first maximal point.
    pub fn scatter_max(&self, x: Var, cell_of: &[Option<usize>], n_cells: usize) -> Result<Var> {
        let [xv] = self.values([x]);
        let xs = xv.shape();
        if xs.len() != 2 || xs[0] != cell_of.len() {
            return shape_err(format!("scatter_max: {xs:?} rows vs {} cells", cell_of.len()));
        }
        let c = xs[1];
        let mut arg: Vec<Option<usize>> = vec![None; c * n_cells];
        let xd = xv.data();
        for (p, cell) in cell_of.iter().enumerate() {
            let Some(cell) = *cell else { continue };
            if cell >= n_cells {
                return Err(Error::Index {
                    index: cell,
                    len: n_cells,
                });
            }
            for ch in 0..c {
                let slot = &mut arg[ch * n_cells + cell];
                match *slot {
                    Some(q) if xd[q * c + ch] >= xd[p * c + ch] => {}
                    _ => *slot = Some(p),
                }
            }
        }
        let out: Vec<f64> = arg
            .iter()
            .enumerate()
            .map(|(i, a)| a.map_or(0.0, |p| xd[p * c + i / n_cells]))
            .collect();
        let out = Tensor::from_parts(vec![c, n_cells], out);
        Ok(self.push(out, &[x], move |g, p, _| {
            let mut gx = vec![0.0; p[0].numel()];
            for (i, a) in arg.iter().enumerate() {
                if let Some(pt) = a {
                    gx[pt * c + i / n_cells] += g.data()[i];
                }
            }
            vec![Some(Tensor::from_parts(p[0].shape().to_vec(), gx))]
        }))
    }

    /// Row mixing with fixed weights: `out[m] = Σ w · x[j]` over `(j, w)` in `rows[m]`.
    pub fn sparse_mix(&self, x: Var, rows: &[Vec<(usize, f64)>]) -> Result<Var> {
        let [xv] = self.values([x]);
        let xs = xv.shape();
        if xs.len() != 2 {
            return shape_err(format!("sparse_mix expects [N, D], got {xs:?}"));
        }
        let (n, d) = (xs[0], xs[1]);
        if rows.is_empty() {
            return Err(Error::Invalid("sparse_mix with no output rows".into()));
        }
        let mut out = vec![0.0; rows.len() * d];
        for (m, row) in rows.iter().enumerate() {
            for &(j, w) in row {
                if j >= n {
                    return Err(Error::Index { index: j, len: n });
                }
                let src = &xv.data()[j * d..][..d];
                for (o, s) in out[m * d..][..d].iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        let rows = rows.to_vec();
        let out = Tensor::from_parts(vec![rows.len(), d], out);
        Ok(self.push(out, &[x], move |g, p, _| {
            let mut gx = vec![0.0; p[0].numel()];
            for (m, row) in rows.iter().enumerate() {
                let gm = &g.data()[m * d..][..d];
                for &(j, w) in row {
                    for (o, s) in gx[j * d..][..d].iter_mut().zip(gm) {
                        *o += w * s;
                    }
                }
            }
            vec![Some(Tensor::from_parts(p[0].shape().to_vec(), gx))]
        }))
    }
}
