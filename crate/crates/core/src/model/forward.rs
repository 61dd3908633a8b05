use serde::Serialize;

use super::params::{ConvIds, GcnIds, LinearIds, NormIds, TtmIds};
use super::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::points::{ball_query, farthest_point_sample, feature_propagation, voxelize_bev};
use crate::tensor::{Bound, ReduceKind, Tape, Tensor, Var};

/// Runtime switches that do not change the parameter layout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardOptions {
    /// When false, template and search rows attend only within their own group.
    pub cross_attention: bool,
    /// Record per-head attention blocks for every layer.
    pub diagnostics: bool,
    /// First index of farthest point sampling over the search cloud.
    pub fps_start: usize,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions {
            cross_attention: true,
            diagnostics: false,
            fps_start: 0,
        }
    }
}

/// Per-head joint attention split into template/search blocks, row-major.
#[derive(Clone, Debug, Serialize)]
pub struct AttentionDecomposition {
    pub n_template: usize,
    pub n_search: usize,
    pub head_dim: usize,
    pub w_tt: Vec<f64>,
    pub w_ts: Vec<f64>,
    pub w_st: Vec<f64>,
    pub w_ss: Vec<f64>,
    pub v_t: Vec<f64>,
    pub v_s: Vec<f64>,
    /// The attention output `softmax(QKᵀ/√d)·V` computed in one product.
    pub output: Vec<f64>,
}

impl AttentionDecomposition {
    fn from_dense(attn: &Tensor, values: &Tensor, output: &Tensor, n_t: usize) -> Self {
        let n = attn.shape()[0];
        let d = values.shape()[1];
        let a = attn.data();
        let block = |r0: usize, r1: usize, c0: usize, c1: usize| {
            let mut out = Vec::with_capacity((r1 - r0) * (c1 - c0));
            for r in r0..r1 {
                out.extend_from_slice(&a[r * n + c0..r * n + c1]);
            }
            out
        };
        AttentionDecomposition {
            n_template: n_t,
            n_search: n - n_t,
            head_dim: d,
            w_tt: block(0, n_t, 0, n_t),
            w_ts: block(0, n_t, n_t, n),
            w_st: block(n_t, n, 0, n_t),
            w_ss: block(n_t, n, n_t, n),
            v_t: values.data()[..n_t * d].to_vec(),
            v_s: values.data()[n_t * d..].to_vec(),
            output: output.data().to_vec(),
        }
    }
}

/// Search points and their features as handed from one attention layer to aggregation.
#[derive(Clone, Debug)]
pub struct SearchLayer {
    pub coords: Vec<[f64; 3]>,
    /// Index of each point into the search cloud.
    pub indices: Vec<usize>,
    pub feats: Var,
}

#[derive(Clone, Debug)]
pub struct OneStream {
    pub layers: Vec<SearchLayer>,
    /// `[layer][head]`, empty unless diagnostics were requested.
    pub attention: Vec<Vec<AttentionDecomposition>>,
}

/// Everything one forward pass produces, as tape vars.
#[derive(Clone, Debug)]
pub struct ModelOutput {
    /// `[ny, nx]`, sigmoid-bounded.
    pub heatmap: Var,
    /// `[3, ny, nx]`: dx, dy in meters, then yaw.
    pub offset_rot: Var,
    /// `[ny, nx]` meters.
    pub zmap: Var,
    /// `[N_s]` per-point target probabilities, in search-cloud order.
    pub seg: Var,
    /// Fused search features `[N_s, D]` in search-cloud order.
    pub fused: Var,
    pub occupancy: Vec<bool>,
    pub layers: Vec<SearchLayer>,
    pub attention: Vec<Vec<AttentionDecomposition>>,
}

/// Head outputs detached from the tape.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadOutputs {
    pub heatmap: Tensor,
    pub offset_rot: Tensor,
    pub zmap: Tensor,
    pub seg_scores: Tensor,
    pub occupancy: Vec<bool>,
}

impl ModelOutput {
    pub fn head_outputs(&self, tape: &Tape) -> HeadOutputs {
        HeadOutputs {
            heatmap: (*tape.value(self.heatmap)).clone(),
            offset_rot: (*tape.value(self.offset_rot)).clone(),
            zmap: (*tape.value(self.zmap)).clone(),
            seg_scores: (*tape.value(self.seg)).clone(),
            occupancy: self.occupancy.clone(),
        }
    }
}

fn coords_tensor(coords: &[[f64; 3]]) -> Result<Tensor> {
    Tensor::new(&[coords.len(), 3], coords.iter().flatten().copied().collect())
}

/// The network bound to one tape.
pub struct Net<'a> {
    pub tape: &'a Tape,
    pub params: &'a ModelParams,
    pub bound: &'a Bound,
    pub cfg: &'a ModelConfig,
}

impl<'a> Net<'a> {
    pub fn new(tape: &'a Tape, params: &'a ModelParams, bound: &'a Bound, cfg: &'a ModelConfig) -> Self {
        Net {
            tape,
            params,
            bound,
            cfg,
        }
    }

    fn linear(&self, x: Var, ids: LinearIds) -> Result<Var> {
        self.tape.linear(x, self.bound[ids.w], Some(self.bound[ids.b]))
    }

    fn conv(&self, x: Var, ids: ConvIds, padding: usize) -> Result<Var> {
        self.tape.conv2d(x, self.bound[ids.w], Some(self.bound[ids.b]), 1, padding)
    }

    fn norm(&self, x: Var, ids: NormIds) -> Result<Var> {
        self.tape.layer_norm(x, self.bound[ids.gain], self.bound[ids.bias], self.cfg.ln_eps)
    }

    fn gcn_layer(&self, ids: &GcnIds, h: Option<Var>, rel: Var, nbr: &[usize], n: usize) -> Result<Var> {
        let t = self.tape;
        let mut msg = t.linear(rel, self.bound[ids.msg_coord], Some(self.bound[ids.msg_bias]))?;
        if let (Some(h), Some(w)) = (h, ids.msg_feat) {
            let proj = t.matmul(h, self.bound[w])?;
            msg = t.add(msg, t.gather_rows(proj, nbr)?)?;
        }
        let k = nbr.len() / n;
        let msg = t.reshape(msg, &[n, k, self.cfg.feat_dim])?;
        let agg = t.reduce(msg, 1, ReduceKind::Max)?;
        Ok(t.relu(self.linear(agg, ids.out)?))
    }

    /// Graph-convolution encoding `[N, D]` of raw coordinates over ball neighborhoods.
    pub fn local_encode(&self, coords: &[[f64; 3]]) -> Result<Var> {
        if coords.is_empty() {
            return Err(Error::Invalid("local_encode on an empty cloud".into()));
        }
        let nb = ball_query(coords, coords, self.cfg.gcn_radius, self.cfg.gcn_neighbors)?;
        let n = coords.len();
        let mut rel = Vec::with_capacity(n * nb.max_neighbors * 3);
        for (q, c) in coords.iter().enumerate() {
            for &j in nb.neighbors(q) {
                let p = coords[j];
                rel.extend_from_slice(&[p[0] - c[0], p[1] - c[1], p[2] - c[2]]);
            }
        }
        let rel = self.tape.constant(Tensor::new(&[n * nb.max_neighbors, 3], rel)?);
        let mut h = None;
        for ids in &self.params.gcn {
            h = Some(self.gcn_layer(ids, h, rel, &nb.indices, n)?);
        }
        Ok(h.expect("at least one gcn layer"))
    }

    fn attention(&self, q: Var, k: Var, v: Var) -> Result<Var> {
        let t = self.tape;
        let scale = 1.0 / (self.cfg.head_dim() as f64).sqrt();
        let scores = t.scale(t.matmul(q, t.transpose(k)?)?, scale);
        let a = t.softmax(scores, 1)?;
        t.matmul(a, v)
    }

    /// One template-aware attention block over the joint rows `[N_t + N_s, D]`.
    pub fn ttm_forward(
        &self,
        ids: &TtmIds,
        coords: &[[f64; 3]],
        feats: Var,
        n_template: usize,
        opts: ForwardOptions,
    ) -> Result<(Var, Vec<AttentionDecomposition>)> {
        let t = self.tape;
        let n = coords.len();
        let rows = t.shape(feats);
        if rows != [n, self.cfg.feat_dim] || n_template > n {
            return Err(Error::Shape(format!(
                "ttm_forward: feats {rows:?} for {n} coordinates ({n_template} template rows)"
            )));
        }
        let p = t.constant(coords_tensor(coords)?);
        let pe = self.linear(t.relu(self.linear(p, ids.pe1)?), ids.pe2)?;
        let x = t.add(feats, pe)?;
        let q = self.linear(x, ids.q)?;
        let k = self.linear(x, ids.k)?;
        let v = self.linear(x, ids.v)?;
        let d = self.cfg.head_dim();
        let n_s = n - n_template;
        let mut heads = Vec::with_capacity(self.cfg.heads);
        let mut diag = Vec::new();
        for h in 0..self.cfg.heads {
            let [qh, kh, vh] = [q, k, v].map(|m| t.narrow(m, 1, h * d, d));
            let (qh, kh, vh) = (qh?, kh?, vh?);
            let out = if opts.cross_attention || n_template == 0 || n_s == 0 {
                let scale = 1.0 / (d as f64).sqrt();
                let a = t.softmax(t.scale(t.matmul(qh, t.transpose(kh)?)?, scale), 1)?;
                let out = t.matmul(a, vh)?;
                if opts.diagnostics {
                    diag.push(AttentionDecomposition::from_dense(
                        &t.value(a),
                        &t.value(vh),
                        &t.value(out),
                        n_template,
                    ));
                }
                out
            } else {
                let part = |m: Var, start: usize, len: usize| t.narrow(m, 0, start, len);
                let ot = self.attention(part(qh, 0, n_template)?, part(kh, 0, n_template)?, part(vh, 0, n_template)?)?;
                let os = self.attention(part(qh, n_template, n_s)?, part(kh, n_template, n_s)?, part(vh, n_template, n_s)?)?;
                let out = t.concat(&[ot, os], 0)?;
                if opts.diagnostics {
                    diag.push(self.masked_diag(qh, kh, vh, out, n_template)?);
                }
                out
            };
            heads.push(out);
        }
        let attn = self.linear(t.concat(&heads, 1)?, ids.o)?;
        let y = self.norm(t.add(x, attn)?, ids.norm1)?;
        let ff = self.linear(t.relu(self.linear(y, ids.ff1)?), ids.ff2)?;
        let z = self.norm(t.add(y, ff)?, ids.norm2)?;
        Ok((z, diag))
    }

    /// Decomposition of the group-restricted attention: cross blocks are zero.
    fn masked_diag(&self, q: Var, k: Var, v: Var, out: Var, n_t: usize) -> Result<AttentionDecomposition> {
        let inf = Tape::inference();
        let [qv, kv] = [q, k].map(|m| inf.constant((*self.tape.value(m)).clone()));
        let n = self.tape.shape(q)[0];
        let scale = 1.0 / (self.cfg.head_dim() as f64).sqrt();
        let scores = inf.value(inf.scale(inf.matmul(qv, inf.transpose(kv)?)?, scale));
        let mut mask = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                if (r < n_t) != (c < n_t) {
                    mask[r * n + c] = f64::NEG_INFINITY;
                }
            }
        }
        let masked = inf.add(inf.constant((*scores).clone()), inf.constant(Tensor::new(&[n, n], mask)?))?;
        let a = inf.softmax(masked, 1)?;
        Ok(AttentionDecomposition::from_dense(
            &inf.value(a),
            &self.tape.value(v),
            &self.tape.value(out),
            n_t,
        ))
    }

    /// Joint encoding of template and search; returns the per-layer search sets.
    pub fn one_stream_forward(
        &self,
        template: &[[f64; 3]],
        search: &[[f64; 3]],
        opts: ForwardOptions,
    ) -> Result<OneStream> {
        let cfg = self.cfg;
        if template.len() != cfg.n_template || search.len() != cfg.n_search {
            return Err(Error::Shape(format!(
                "expected {} template and {} search points, got {} and {}",
                cfg.n_template,
                cfg.n_search,
                template.len(),
                search.len()
            )));
        }
        let t = self.tape;
        let ft = self.local_encode(template)?;
        let fs = self.local_encode(search)?;
        let mut feats = t.concat(&[ft, fs], 0)?;
        let coords: Vec<[f64; 3]> = template.iter().chain(search).copied().collect();
        let n_t = template.len();
        let sizes = cfg.layer_sizes();
        let mut layers = Vec::with_capacity(sizes.len());
        let mut attention = Vec::new();
        for (ids, &keep) in self.params.ttm.iter().zip(&sizes) {
            let (out, diag) = self.ttm_forward(ids, &coords, feats, n_t, opts)?;
            if opts.diagnostics {
                attention.push(diag);
            }
            let search_feats = t.narrow(out, 0, n_t, search.len())?;
            let indices = if keep == search.len() {
                (0..keep).collect()
            } else {
                farthest_point_sample(search, keep, opts.fps_start)?
            };
            let feats_kept = if keep == search.len() {
                search_feats
            } else {
                t.gather_rows(search_feats, &indices)?
            };
            layers.push(SearchLayer {
                coords: indices.iter().map(|&i| search[i]).collect(),
                indices,
                feats: feats_kept,
            });
            feats = out;
        }
        Ok(OneStream { layers, attention })
    }

    /// Aggregates the per-layer search sets from sparsest to densest.
    pub fn mfa_forward(&self, layers: &[SearchLayer]) -> Result<Var> {
        if layers.len() != self.cfg.ttm_layers {
            return Err(Error::Invalid(format!(
                "aggregation needs {} layer outputs, got {}",
                self.cfg.ttm_layers,
                layers.len()
            )));
        }
        let chain: Vec<&SearchLayer> = match self.cfg.mfa_direction {
            super::MfaDirection::Specific => layers.iter().collect(),
            super::MfaDirection::Usual => layers.iter().rev().collect(),
        };
        let t = self.tape;
        let mut fused = chain[0].feats;
        for (stage, pair) in chain.windows(2).enumerate() {
            let fp = feature_propagation(t, &pair[0].coords, fused, &pair[1].coords)?;
            let cat = t.concat(&[fp, pair[1].feats], 1)?;
            fused = t.relu(self.linear(cat, self.params.mfa[stage])?);
        }
        Ok(fused)
    }

    /// Per-point target probability `[N]`.
    pub fn segment_scores(&self, feats: Var) -> Result<Var> {
        let t = self.tape;
        let h = t.relu(self.linear(feats, self.params.seg1)?);
        let s = t.sigmoid(self.linear(h, self.params.seg2)?);
        let n = t.shape(s)[0];
        t.reshape(s, &[n])
    }

    /// Rows `[s; p; F]` of width `1 + 3 + D`.
    pub fn augment_features(&self, scores: Var, coords: &[[f64; 3]], feats: Var) -> Result<Var> {
        augment_features(self.tape, scores, coords, feats)
    }

    /// Convolutional trunk and the heatmap, offset/rotation and z branches.
    pub fn bev_head_forward(&self, bev: Var) -> Result<(Var, Var, Var)> {
        let t = self.tape;
        let s = t.shape(bev);
        let grid = &self.cfg.bev_grid;
        if s != [self.cfg.bev_channels(), grid.ny, grid.nx] {
            return Err(Error::Shape(format!(
                "BEV input {s:?}, expected [{}, {}, {}]",
                self.cfg.bev_channels(),
                grid.ny,
                grid.nx
            )));
        }
        let mut h = bev;
        for &ids in &self.params.trunk {
            h = t.relu(self.conv(h, ids, 1)?);
        }
        let heat = t.sigmoid(self.conv(h, self.params.heat, 0)?);
        let heat = t.reshape(heat, &[grid.ny, grid.nx])?;
        let offset = self.conv(h, self.params.offset, 0)?;
        let z = t.reshape(self.conv(h, self.params.zmap, 0)?, &[grid.ny, grid.nx])?;
        Ok((heat, offset, z))
    }

    /// Full pass from canonical template and search coordinates to head outputs.
    pub fn forward(&self, template: &[[f64; 3]], search: &[[f64; 3]], opts: ForwardOptions) -> Result<ModelOutput> {
        let stream = self.one_stream_forward(template, search, opts)?;
        let fused = self.mfa_forward(&stream.layers)?;
        let dense = match self.cfg.mfa_direction {
            super::MfaDirection::Specific => stream.layers.last(),
            super::MfaDirection::Usual => stream.layers.first(),
        }
        .expect("at least one layer");
        debug_assert!(dense.indices.iter().enumerate().all(|(i, &j)| i == j));
        let seg = self.segment_scores(fused)?;
        let aug = self.augment_features(seg, search, fused)?;
        let (bev, occupancy) = voxelize_bev(self.tape, aug, search, &self.cfg.bev_grid)?;
        let (heatmap, offset_rot, zmap) = self.bev_head_forward(bev)?;
        Ok(ModelOutput {
            heatmap,
            offset_rot,
            zmap,
            seg,
            fused,
            occupancy,
            layers: stream.layers,
            attention: stream.attention,
        })
    }
}

/// Rows `[s; p; F]` of width `1 + 3 + D`.
pub fn augment_features(tape: &Tape, scores: Var, coords: &[[f64; 3]], feats: Var) -> Result<Var> {
    let n = coords.len();
    if tape.shape(scores) != [n] || tape.shape(feats)[0] != n {
        return Err(Error::Shape(format!(
            "augment: scores {:?}, feats {:?}, {n} coordinates",
            tape.shape(scores),
            tape.shape(feats)
        )));
    }
    let s = tape.reshape(scores, &[n, 1])?;
    let p = tape.constant(coords_tensor(coords)?);
    tape.concat(&[s, p, feats], 1)
}

/// Forward pass on a fresh inference tape; returns detached head outputs.
pub fn predict(
    params: &ModelParams,
    cfg: &ModelConfig,
    template: &[[f64; 3]],
    search: &[[f64; 3]],
    opts: ForwardOptions,
) -> Result<HeadOutputs> {
    let tape = Tape::inference();
    let bound = params.store.bind(&tape);
    let out = Net::new(&tape, params, &bound, cfg).forward(template, search, opts)?;
    Ok(out.head_outputs(&tape))
}
