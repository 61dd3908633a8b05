//! Self-checks shared by the command line and the test suites.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::Box3D;
use crate::losses::{compute_losses, make_bev_targets, LossConfig};
use crate::model::{ForwardOptions, ModelConfig, ModelParams, Net};
use crate::points::BevGrid;
use crate::tensor::{grad_check_floored, op_suite, Bound, GradReport, Probe, Tensor};

/// The reduced model used for end-to-end gradient checks: 16 template and
/// 32 search points, 8 features, an 8×8 grid.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        n_template: 16,
        n_search: 32,
        feat_dim: 8,
        heads: 4,
        gcn_radius: 0.6,
        gcn_neighbors: 8,
        mfa_samples: vec![8, 16],
        bev_grid: BevGrid::new((-1.6, 1.6), (-1.6, 1.6), (-1.0, 1.0), 0.4).expect("tiny grid"),
        ..ModelConfig::default()
    }
}

/// Random template/search clouds around a box at the origin of the search frame.
pub fn random_scene(cfg: &ModelConfig, seed: u64) -> (Vec<[f64; 3]>, Vec<[f64; 3]>, Box3D) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let gt = Box3D::new(
        [rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-0.2..0.2)],
        [1.2, 0.6, 0.5],
        rng.gen_range(-0.5..0.5),
    );
    let mut cloud = |n: usize, spread: f64| -> Vec<[f64; 3]> {
        (0..n)
            .map(|_| {
                [
                    rng.gen_range(-spread..spread),
                    rng.gen_range(-spread..spread),
                    rng.gen_range(-0.4..0.4),
                ]
            })
            .collect()
    };
    let template = cloud(cfg.n_template, 0.6);
    let search = cloud(cfg.n_search, 1.4);
    (template, search, gt)
}

/// Central differences at eps 1e-6 carry rounding noise near 1e-8 on this loss,
/// so exactly-zero gradients (the key bias under softmax) compare absolutely.
const FD_NOISE_FLOOR: f64 = 1e-5;

/// Central-difference check of the full training loss with respect to every
/// parameter tensor of the reduced model, at jittered initial weights.
pub fn end_to_end_grad_check(seed: u64, tol: f64) -> Result<GradReport> {
    let cfg = tiny_config();
    let params = ModelParams::init(&cfg, seed)?;
    let (template, search, gt) = random_scene(&cfg, seed.wrapping_add(1));
    let targets = make_bev_targets(&gt, &cfg.bev_grid, &search)?;
    let lcfg = LossConfig::default();
    // zero biases on empty pixels would put relu inputs exactly on the kink
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let inputs: Vec<Tensor> = params
        .store
        .iter()
        .map(|p| {
            let mut t = p.value.clone();
            t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
            t
        })
        .collect();
    grad_check_floored(
        "model_forward+total_loss",
        |tape, vars| {
            let bound = Bound::from_vars(vars.to_vec());
            let net = Net::new(tape, &params, &bound, &cfg);
            let out = net.forward(&template, &search, ForwardOptions::default())?;
            Ok(compute_losses(tape, &out, &targets, &cfg.bev_grid, &lcfg)?.total)
        },
        &inputs,
        1e-6,
        tol,
        Probe::Sample {
            per_input: 4,
            seed,
        },
        FD_NOISE_FLOOR,
    )
}

/// Op-level suite followed by the end-to-end check.
pub fn full_grad_suite(seed: u64) -> Result<Vec<GradReport>> {
    let mut reports = op_suite(seed, 10)?;
    reports.push(end_to_end_grad_check(seed, 1e-3)?);
    Ok(reports)
}
