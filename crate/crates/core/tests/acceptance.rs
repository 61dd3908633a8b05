//! One PASS/FAIL line per acceptance criterion. Criteria 7 and 8 train models
//! and dominate the runtime.

use std::time::Instant;

use onestream::checks::{end_to_end_grad_check, tiny_config};
use onestream::data::{synth_sequence, MotionModel, Sequence, SynthConfig};
use onestream::eval::{count_flops, count_params, evaluate, track_all};
use onestream::geometry::{box_iou_3d, center_distance, point_in_box, Box3D};
use onestream::losses::{
    focal_loss, make_bev_targets, offset_loss, seg_loss, total_loss, zaxis_loss, BevTargets, LossConfig,
};
use onestream::model::{ForwardOptions, ModelConfig, ModelParams, Net};
use onestream::points::{farthest_point_sample, voxelize_bev, BevGrid, PointCloud};
use onestream::tensor::{load_checkpoint, op_suite, save_checkpoint, Tape, Tensor};
use onestream::tracker::{track_sequence, track_sequence_with, TrackResult, TrackerConfig};
use onestream::train::{draw_batch, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, name: &str, passed: bool, detail: String) {
    let verdict = if passed { "PASS" } else { "FAIL" };
    println!("criterion {id:>2} {verdict} {name}: {detail}");
    assert!(passed, "criterion {id} ({name}) failed: {detail}");
}

fn cloud(rng: &mut ChaCha8Rng, n: usize, spread: f64) -> Vec<[f64; 3]> {
    (0..n)
        .map(|_| [rng.gen_range(-spread..spread), rng.gen_range(-spread..spread), rng.gen_range(-0.5..0.5)])
        .collect()
}

#[test]
fn c01_gradient_suite() {
    let start = Instant::now();
    let ops = op_suite(0, 10).unwrap();
    let op_ok = ops.iter().all(|r| r.passed && r.tolerance <= 1e-4);
    let op_worst = ops.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let cfg = tiny_config();
    let shape_ok = cfg.n_template == 16 && cfg.n_search == 32 && cfg.feat_dim == 8 && cfg.bev_grid.nx == 8 && cfg.bev_grid.ny == 8;
    let e2e = end_to_end_grad_check(0, 1e-3).unwrap();
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        "gradient suite",
        op_ok && shape_ok && e2e.passed && secs < 120.0,
        format!(
            "{} ops, worst op rel err {op_worst:.2e} (tol 1e-4); end-to-end {:.2e} (tol 1e-3); {secs:.1}s",
            ops.len(),
            e2e.max_rel_error
        ),
    );
}

#[test]
fn c02_attention_block_identity() {
    let cfg = ModelConfig {
        n_template: 48,
        n_search: 96,
        mfa_samples: vec![24, 48],
        ..ModelConfig::default()
    };
    let params = ModelParams::init(&cfg, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut blocks = 0;
    for _ in 0..50 {
        let (t, s) = (cloud(&mut rng, 48, 0.8), cloud(&mut rng, 96, 2.5));
        let tape = Tape::inference();
        let bound = params.store.bind(&tape);
        let opts = ForwardOptions {
            diagnostics: true,
            fps_start: rng.gen_range(0..96),
            ..ForwardOptions::default()
        };
        let stream = Net::new(&tape, &params, &bound, &cfg).one_stream_forward(&t, &s, opts).unwrap();
        for layer in &stream.attention {
            for a in layer {
                blocks += 1;
                let (nt, ns, d) = (a.n_template, a.n_search, a.head_dim);
                for r in 0..nt + ns {
                    for c in 0..d {
                        let mut acc = 0.0;
                        for j in 0..nt {
                            let w = if r < nt { a.w_tt[r * nt + j] } else { a.w_st[(r - nt) * nt + j] };
                            acc += w * a.v_t[j * d + c];
                        }
                        for j in 0..ns {
                            let w = if r < nt { a.w_ts[r * ns + j] } else { a.w_ss[(r - nt) * ns + j] };
                            acc += w * a.v_s[j * d + c];
                        }
                        worst = worst.max((acc - a.output[r * d + c]).abs());
                    }
                }
            }
        }
    }
    report(
        2,
        "blockwise attention recomposition",
        blocks == 50 * 3 * 4 && worst <= 1e-10,
        format!("{blocks} layer-head blocks, max abs diff {worst:.2e} (tol 1e-10)"),
    );
}

fn fused_search(params: &ModelParams, cfg: &ModelConfig, t: &[[f64; 3]], s: &[[f64; 3]], cross: bool) -> Tensor {
    let tape = Tape::inference();
    let bound = params.store.bind(&tape);
    let opts = ForwardOptions {
        cross_attention: cross,
        ..ForwardOptions::default()
    };
    let out = Net::new(&tape, params, &bound, cfg).forward(t, s, opts).unwrap();
    (*tape.value(out.fused)).clone()
}

#[test]
fn c03_template_information_flow() {
    let cfg = ModelConfig {
        n_template: 64,
        n_search: 128,
        mfa_samples: vec![32, 64],
        ..ModelConfig::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut identical = true;
    let mut min_diff = f64::INFINITY;
    for seed in 0..5 {
        let params = ModelParams::init(&cfg, seed).unwrap();
        let s = cloud(&mut rng, 128, 2.5);
        let (ta, tb) = (cloud(&mut rng, 64, 0.8), cloud(&mut rng, 64, 0.8));
        identical &= fused_search(&params, &cfg, &ta, &s, false) == fused_search(&params, &cfg, &tb, &s, false);
        let (a, b) = (fused_search(&params, &cfg, &ta, &s, true), fused_search(&params, &cfg, &tb, &s, true));
        let mad = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.numel() as f64;
        min_diff = min_diff.min(mad);
    }
    report(
        3,
        "template information flow",
        identical && min_diff > 0.0,
        format!("cross blocks zeroed: bit-identical = {identical}; active: min mean abs diff {min_diff:.3e}"),
    );
}

fn random_targets(rng: &mut ChaCha8Rng) -> (BevGrid, BevTargets, Vec<[f64; 3]>) {
    let nx = rng.gen_range(4..12);
    let ny = rng.gen_range(4..12);
    let px = rng.gen_range(0.25..0.5);
    let g = BevGrid::new((-(nx as f64) * px / 2.0, nx as f64 * px / 2.0), (-(ny as f64) * px / 2.0, ny as f64 * px / 2.0), (-1.0, 1.0), px).unwrap();
    let (hx, hy) = (nx as f64 * px / 2.0, ny as f64 * px / 2.0);
    let gt = Box3D::new(
        [rng.gen_range(-0.9 * hx..0.9 * hx), rng.gen_range(-0.9 * hy..0.9 * hy), rng.gen_range(-0.5..0.5)],
        [rng.gen_range(0.5..3.0), rng.gen_range(0.4..1.5), rng.gen_range(0.5..2.0)],
        rng.gen_range(-3.1..3.1),
    );
    let pts = cloud(rng, 40, hx.max(hy));
    let t = make_bev_targets(&gt, &g, &pts).unwrap();
    (g, t, pts)
}

#[test]
fn c04_loss_arithmetic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let lc = LossConfig::default();
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let (g, t, _) = random_targets(&mut rng);
        let n = g.num_pixels();
        let heat: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
        let off: Vec<f64> = (0..3 * n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let zm: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let seg: Vec<f64> = (0..t.seg_labels.len()).map(|_| rng.gen_range(0.0..1.0)).collect();
        let lam: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..3.0)).collect();

        let tape = Tape::inference();
        let hv = tape.constant(Tensor::new(&[g.ny, g.nx], heat.clone()).unwrap());
        let ov = tape.constant(Tensor::new(&[3, g.ny, g.nx], off.clone()).unwrap());
        let zv = tape.constant(Tensor::new(&[g.ny, g.nx], zm.clone()).unwrap());
        let sv = tape.constant(Tensor::vector(seg.clone()));
        let f = focal_loss(&tape, hv, &t.heatmap, lc.alpha, lc.beta, lc.eps_clip).unwrap();
        let o = offset_loss(&tape, ov, &t, lc.radius, &g).unwrap();
        let z = zaxis_loss(&tape, zv, t.center_pixel, t.z).unwrap();
        let s = seg_loss(&tape, sv, &t.seg_labels, lc.eps_clip).unwrap();
        let cfg = LossConfig {
            lambda_seg: lam[0],
            lambda_center: lam[1],
            lambda_offset: lam[2],
            lambda_z: lam[3],
            ..lc.clone()
        };
        let tot = total_loss(&tape, s, f, o, z, &cfg).unwrap();
        let got = |v| tape.value(v).item();

        let clip = |p: f64| p.clamp(lc.eps_clip, 1.0 - lc.eps_clip);
        let mut want_f = 0.0;
        for (i, &h) in t.heatmap.data().iter().enumerate() {
            let p = clip(heat[i]);
            want_f -= if h == 1.0 {
                (1.0 - p).powf(lc.alpha) * p.ln()
            } else {
                (1.0 - h).powf(lc.beta) * p.powf(lc.alpha) * (1.0 - p).ln()
            };
        }
        let (cx, cy) = (t.center_pixel.0 as i64, t.center_pixel.1 as i64);
        let r = lc.radius as i64;
        let mut want_o = 0.0;
        for iy in (cy - r).max(0)..=(cy + r).min(g.ny as i64 - 1) {
            for ix in (cx - r).max(0)..=(cx + r).min(g.nx as i64 - 1) {
                let (ix, iy) = (ix as usize, iy as usize);
                let pcx = g.x_range.0 + (ix as f64 + 0.5) * g.pixel_size;
                let pcy = g.y_range.0 + (iy as f64 + 0.5) * g.pixel_size;
                let p = iy * g.nx + ix;
                want_o += (off[p] - (t.center[0] - pcx)).abs()
                    + (off[n + p] - (t.center[1] - pcy)).abs()
                    + (off[2 * n + p] - t.yaw).abs();
            }
        }
        let want_z = (zm[t.center_pixel.1 * g.nx + t.center_pixel.0] - t.z).abs();
        let want_s = -seg
            .iter()
            .zip(&t.seg_labels)
            .map(|(&v, &l)| if l { clip(v).ln() } else { (1.0 - clip(v)).ln() })
            .sum::<f64>()
            / seg.len() as f64;
        let want_t = lam[0] * want_s + lam[1] * want_f + lam[2] * want_o + lam[3] * want_z;
        for (a, b) in [(got(f), want_f), (got(o), want_o), (got(z), want_z), (got(s), want_s), (got(tot), want_t)] {
            worst = worst.max((a - b).abs());
        }
    }
    let tape = Tape::inference();
    let one = tape.constant(Tensor::scalar(1.0));
    let unit = tape.value(total_loss(&tape, one, one, one, one, &lc).unwrap()).item();
    report(
        4,
        "loss arithmetic",
        worst <= 1e-9 && unit == 5.0,
        format!("20 random grids, max abs diff {worst:.2e} (tol 1e-9); unit components total {unit}"),
    );
}

#[test]
fn c05_heatmap_three_case_rule() {
    let g = BevGrid::new((-4.8, 4.8), (-4.8, 4.8), (-2.0, 2.0), 0.3).unwrap();
    assert_eq!((g.nx, g.ny), (32, 32));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut mismatches = 0;
    let mut cases = [0usize; 3];
    for _ in 0..20 {
        let gt = Box3D::new(
            [rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0), rng.gen_range(-1.0..1.0)],
            [rng.gen_range(0.5..5.0), rng.gen_range(0.4..2.5), rng.gen_range(0.5..2.0)],
            rng.gen_range(-3.1..3.1),
        );
        let t = make_bev_targets(&gt, &g, &[]).unwrap();
        let cx = ((gt.center[0] - g.x_range.0) / g.pixel_size).floor() as usize;
        let cy = ((gt.center[1] - g.y_range.0) / g.pixel_size).floor() as usize;
        for iy in 0..32 {
            for ix in 0..32 {
                let x = g.x_range.0 + (ix as f64 + 0.5) * g.pixel_size;
                let y = g.y_range.0 + (iy as f64 + 0.5) * g.pixel_size;
                let want = if (ix, iy) == (cx, cy) {
                    cases[0] += 1;
                    1.0
                } else if point_in_box([x, y, gt.center[2]], &gt) {
                    cases[1] += 1;
                    let d = (((ix as f64 - cx as f64).powi(2) + (iy as f64 - cy as f64).powi(2)) as f64).sqrt();
                    1.0 / (1.0 + d)
                } else {
                    cases[2] += 1;
                    0.0
                };
                mismatches += (t.heatmap.at(&[iy, ix]) != want) as usize;
            }
        }
    }
    report(
        5,
        "heatmap targets",
        mismatches == 0,
        format!("20 boxes on 32x32, {mismatches} mismatching pixels; center/in-box/outside = {cases:?}"),
    );
}

/// Overlap measured on a `res`-cubed lattice of cell centers over both boxes' bounds.
fn raster_iou(a: &Box3D, b: &Box3D, res: usize) -> f64 {
    let mut lo = [f64::INFINITY; 3];
    let mut hi = [f64::NEG_INFINITY; 3];
    for c in a.corners().iter().chain(b.corners().iter()) {
        for k in 0..3 {
            lo[k] = lo[k].min(c[k]);
            hi[k] = hi[k].max(c[k]);
        }
    }
    let step: Vec<f64> = (0..3).map(|k| (hi[k] - lo[k]) / res as f64).collect();
    let z_in = |bx: &Box3D, z: f64| (z - bx.center[2]).abs() <= bx.size[2] / 2.0;
    let za: Vec<bool> = (0..res).map(|k| z_in(a, lo[2] + (k as f64 + 0.5) * step[2])).collect();
    let zb: Vec<bool> = (0..res).map(|k| z_in(b, lo[2] + (k as f64 + 0.5) * step[2])).collect();
    let (mut both, mut any) = (0u64, 0u64);
    for i in 0..res {
        let x = lo[0] + (i as f64 + 0.5) * step[0];
        for j in 0..res {
            let y = lo[1] + (j as f64 + 0.5) * step[1];
            let fa = a.contains([x, y, a.center[2]]);
            let fb = b.contains([x, y, b.center[2]]);
            if !fa && !fb {
                continue;
            }
            for k in 0..res {
                let (ia, ib) = (fa && za[k], fb && zb[k]);
                both += (ia && ib) as u64;
                any += (ia || ib) as u64;
            }
        }
    }
    both as f64 / any as f64
}

fn brute_fps(c: &[[f64; 3]], k: usize, start: usize) -> Vec<usize> {
    let d2 = |a: [f64; 3], b: [f64; 3]| (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>();
    let mut sel = vec![start];
    while sel.len() < k {
        let mut best = (f64::NEG_INFINITY, 0);
        for (i, &p) in c.iter().enumerate() {
            let m = sel.iter().map(|&s| d2(p, c[s])).fold(f64::INFINITY, f64::min);
            if m > best.0 {
                best = (m, i);
            }
        }
        sel.push(best.1);
    }
    sel
}

#[test]
fn c06_geometry_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut iou_worst = 0.0f64;
    for _ in 0..100 {
        let mut bx = || {
            Box3D::new(
                [rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), rng.gen_range(-0.4..0.4)],
                [rng.gen_range(0.5..3.0), rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0)],
                rng.gen_range(-3.1..3.1),
            )
        };
        let (a, b) = (bx(), bx());
        iou_worst = iou_worst.max((box_iou_3d(&a, &b) - raster_iou(&a, &b, 200)).abs());
    }

    let mut fps_ok = true;
    for &(n, k) in &[(16, 16), (100, 40), (512, 128), (1024, 256), (1024, 1024)] {
        let c: Vec<[f64; 3]> = cloud(&mut rng, n, 3.0);
        let start = rng.gen_range(0..n);
        fps_ok &= farthest_point_sample(&c, k, start).unwrap() == brute_fps(&c, k, start);
    }

    let g = BevGrid::new((-2.4, 2.4), (-1.8, 1.8), (-0.6, 0.6), 0.3).unwrap();
    let mut vox_ok = true;
    for _ in 0..10 {
        let n = rng.gen_range(1..400);
        let coords = cloud(&mut rng, n, 2.8);
        let d = 3;
        let feats: Vec<f64> = (0..n * d).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let tape = Tape::inference();
        let fv = tape.constant(Tensor::new(&[n, d], feats.clone()).unwrap());
        let (map, mask) = voxelize_bev(&tape, fv, &coords, &g).unwrap();
        let map = tape.value(map);
        for iy in 0..g.ny {
            for ix in 0..g.nx {
                let members: Vec<usize> = (0..n)
                    .filter(|&i| {
                        let p = coords[i];
                        ((p[0] - g.x_range.0) / g.pixel_size).floor() == ix as f64
                            && ((p[1] - g.y_range.0) / g.pixel_size).floor() == iy as f64
                            && (g.z_range.0..=g.z_range.1).contains(&p[2])
                    })
                    .collect();
                vox_ok &= mask[iy * g.nx + ix] == !members.is_empty();
                for c in 0..d {
                    let want = if members.is_empty() {
                        0.0
                    } else {
                        members.iter().map(|&i| feats[i * d + c]).fold(f64::NEG_INFINITY, f64::max)
                    };
                    vox_ok &= map.at(&[c, iy, ix]) == want;
                }
            }
        }
    }
    report(
        6,
        "geometry oracles",
        iou_worst <= 2e-2 && fps_ok && vox_ok,
        format!("IoU vs 200^3 raster max diff {iou_worst:.2e} (tol 2e-2); FPS exact = {fps_ok}; voxelize exact = {vox_ok}"),
    );
}

fn desk_model() -> ModelConfig {
    ModelConfig {
        n_template: 64,
        n_search: 128,
        feat_dim: 16,
        heads: 2,
        gcn_radius: 0.6,
        gcn_neighbors: 8,
        mfa_samples: vec![32, 64],
        bev_grid: BevGrid::new((-4.8, 4.8), (-4.8, 4.8), (-2.0, 2.0), 0.4).unwrap(),
        ..ModelConfig::default()
    }
}

fn desk_train() -> TrainConfig {
    TrainConfig {
        steps: 2000,
        batch: 4,
        lr: 3e-3,
        lr_final_frac: 0.05,
        ..TrainConfig::default()
    }
}

#[test]
fn c07_desk_scale_learning() {
    let start = Instant::now();
    let seqs: Vec<Sequence> = (0..8)
        .map(|i| {
            synth_sequence(&SynthConfig {
                n_frames: 20,
                seed: 100 + i,
                ..SynthConfig::default()
            })
            .unwrap()
        })
        .collect();
    let (mcfg, tcfg) = (desk_model(), desk_train());
    let mut trainer = Trainer::new(mcfg.clone(), LossConfig::default(), tcfg.clone()).unwrap();
    let fixed = draw_batch(&seqs, &mcfg, &tcfg, 999_999).unwrap();
    let initial = trainer.evaluate_batch(&fixed).unwrap().total;
    for _ in 0..tcfg.steps {
        trainer.step(&seqs).unwrap();
    }
    let last = trainer.evaluate_batch(&fixed).unwrap().total;
    let refs: Vec<&Sequence> = seqs.iter().collect();
    let preds = track_all(&trainer.params, &mcfg, &TrackerConfig::default(), &refs).unwrap();
    let m = evaluate(&preds, &seqs).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let ratio = last / initial;
    report(
        7,
        "desk-scale learning",
        ratio < 0.1 && m.success >= 80.0 && m.precision >= 80.0,
        format!(
            "loss {initial:.3} -> {last:.3} (ratio {ratio:.3}, need < 0.1); Success {:.2} Precision {:.2} (need >= 80); {secs:.0}s on {} threads",
            m.success,
            m.precision,
            onestream::eval::worker_count()
        ),
    );
}

fn generalization_model() -> ModelConfig {
    ModelConfig {
        n_template: 128,
        n_search: 256,
        feat_dim: 32,
        heads: 4,
        gcn_radius: 0.5,
        gcn_neighbors: 8,
        mfa_samples: vec![64, 128],
        bev_grid: BevGrid::new((-4.8, 4.8), (-4.8, 4.8), (-2.0, 2.0), 0.3).unwrap(),
        ..ModelConfig::default()
    }
}

/// Car-like cuboids at scales 0.25 to 1.15 for training, pedestrian-like ones for testing.
fn generalization_data() -> (Vec<Sequence>, Vec<Sequence>) {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let train = (0..16)
        .map(|i| {
            let k = rng.gen_range(0.25..1.15);
            let size = [k * rng.gen_range(3.6..4.2), k * rng.gen_range(1.5..1.7), k * rng.gen_range(1.4..1.6)];
            synth_sequence(&SynthConfig {
                seed: 200 + i,
                size,
                ..SynthConfig::default()
            })
            .unwrap()
        })
        .collect();
    let test = (0..8)
        .map(|i| {
            let size = [rng.gen_range(0.6..0.9), rng.gen_range(0.5..0.8), rng.gen_range(1.6..1.9)];
            synth_sequence(&SynthConfig {
                category: "Pedestrian".into(),
                seed: 300 + i,
                size,
                motion: MotionModel {
                    speed: (0.02, 0.1),
                    ..MotionModel::default()
                },
                ..SynthConfig::default()
            })
            .unwrap()
        })
        .collect();
    (train, test)
}

#[test]
fn c08_generalization_to_unseen_shape() {
    let start = Instant::now();
    let (train, test) = generalization_data();
    let mcfg = generalization_model();
    let mut trainer = Trainer::new(mcfg.clone(), LossConfig::default(), desk_train()).unwrap();
    for _ in 0..trainer.tcfg.steps {
        trainer.step(&train).unwrap();
    }
    assert!(!trainer.categories.contains("Pedestrian"));
    let tcfg = TrackerConfig::default();
    let preds: Vec<TrackResult> = test.iter().map(|s| track_sequence(&trainer.params, &mcfg, &tcfg, s).unwrap()).collect();
    let b = evaluate(&preds, &test).unwrap();
    let noise: Vec<TrackResult> = test
        .iter()
        .map(|s| {
            let size = s.frames[0].gt.size;
            track_sequence_with(&trainer.params, &mcfg, &tcfg, s, |t, c| {
                let mut r = ChaCha8Rng::seed_from_u64(t as u64);
                let pts = (0..c.len())
                    .map(|_| [(r.gen::<f64>() - 0.5) * size[0], (r.gen::<f64>() - 0.5) * size[1], (r.gen::<f64>() - 0.5) * size[2]])
                    .collect();
                PointCloud::new(pts)
            })
            .unwrap()
        })
        .collect();
    let control = evaluate(&noise, &test).unwrap();
    let secs = start.elapsed().as_secs_f64();
    report(
        8,
        "generalization to an unseen category",
        b.success >= 50.0 && b.success > control.success,
        format!(
            "unseen Success {:.2} Precision {:.2}; noise-template control Success {:.2} Precision {:.2}; {secs:.0}s",
            b.success, b.precision, control.success, control.precision
        ),
    );
}

#[test]
fn c09_metrics() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let n = rng.gen_range(2..30);
        let gts: Vec<Box3D> = (0..n)
            .map(|t| Box3D::new([t as f64 * 0.4, rng.gen_range(-1.0..1.0), 0.0], [3.9, 1.6, 1.5], rng.gen_range(-3.0..3.0)))
            .collect();
        let noise = rng.gen_range(0.05..2.0);
        let preds: Vec<Box3D> = gts
            .iter()
            .map(|g| {
                Box3D::new(
                    [g.center[0] + rng.gen_range(-noise..noise), g.center[1] + rng.gen_range(-noise..noise), g.center[2]],
                    g.size,
                    g.yaw + rng.gen_range(-0.5..0.5),
                )
            })
            .collect();
        let seq = Sequence {
            id: "s".into(),
            category: "Car".into(),
            scene: 0,
            frames: gts
                .iter()
                .map(|&gt| onestream::data::Frame {
                    cloud: std::sync::Arc::new(PointCloud::default()),
                    gt,
                })
                .collect(),
        };
        let pr = TrackResult {
            seq: "s".into(),
            boxes: preds.clone(),
            ms: vec![0.0; n],
        };
        let m = evaluate(&[pr], &[seq]).unwrap();
        let ious: Vec<f64> = (1..n).map(|t| box_iou_3d(&preds[t], &gts[t])).collect();
        let dists: Vec<f64> = (1..n).map(|t| center_distance(&preds[t], &gts[t])).collect();
        let (mut s, mut p) = (0.0, 0.0);
        for k in 0..=100 {
            s += ious.iter().filter(|&&u| u > 0.0 && u >= k as f64 / 100.0 - 1e-9).count() as f64;
            p += dists.iter().filter(|&&d| d <= 2.0 * k as f64 / 100.0 + 1e-9).count() as f64;
        }
        let denom = 101.0 * (n - 1) as f64;
        worst = worst.max((m.success - 100.0 * s / denom).abs()).max((m.precision - 100.0 * p / denom).abs());
    }
    let line = |dy: f64| -> (Vec<Box3D>, Vec<Box3D>) {
        let g: Vec<Box3D> = (0..30).map(|t| Box3D::new([t as f64, 0.0, 0.0], [0.5, 0.5, 0.5], 0.0)).collect();
        let mut p: Vec<Box3D> = g.iter().map(|b| Box3D::new([b.center[0], dy, 0.0], b.size, 0.0)).collect();
        p[0] = g[0];
        (g, p)
    };
    let score = |(g, p): (Vec<Box3D>, Vec<Box3D>)| {
        let seq = Sequence {
            id: "l".into(),
            category: "Car".into(),
            scene: 0,
            frames: g
                .iter()
                .map(|&gt| onestream::data::Frame {
                    cloud: std::sync::Arc::new(PointCloud::default()),
                    gt,
                })
                .collect(),
        };
        let n = p.len();
        evaluate(&[TrackResult { seq: "l".into(), boxes: p, ms: vec![0.0; n] }], &[seq]).unwrap()
    };
    let perfect = score(line(0.0));
    let one_m = score(line(1.0));
    report(
        9,
        "metrics",
        worst <= 1e-9 && perfect.success == 100.0 && perfect.precision == 100.0 && (one_m.precision - 50.0).abs() <= 0.5,
        format!(
            "oracle max diff {worst:.2e}; perfect {}/{}; constant 1 m error Precision {:.2} Success {:.2}",
            perfect.success, perfect.precision, one_m.precision, one_m.success
        ),
    );
}

#[test]
fn c10_cost_accounting() {
    let dir = tempfile::tempdir().unwrap();
    let mut exact = true;
    let configs = [ModelConfig::default(), desk_model(), generalization_model(), tiny_config()];
    for (i, cfg) in configs.iter().enumerate() {
        let params = ModelParams::init(cfg, 0).unwrap();
        let path = dir.path().join(format!("m{i}.json"));
        save_checkpoint(&path, &params.store, serde_json::json!({})).unwrap();
        let (store, _) = load_checkpoint(&path).unwrap();
        let elements: u64 = store.iter().map(|p| p.value.numel() as u64).sum();
        exact &= count_params(cfg) == elements;
    }
    let one = ModelConfig {
        ttm_layers: 1,
        mfa_samples: vec![],
        ..ModelConfig::default()
    };
    let two = ModelConfig {
        ttm_layers: 2,
        mfa_samples: vec![512],
        ..ModelConfig::default()
    };
    let ratio = count_flops(&two).ttm as f64 / count_flops(&one).ttm as f64;
    report(
        10,
        "cost accounting",
        exact && (ratio - 2.0).abs() <= 0.05,
        format!(
            "param count equals checkpoint elements on {} configs = {exact}; TTM FLOPs tau=2/tau=1 = {ratio:.4}",
            configs.len()
        ),
    );
}
