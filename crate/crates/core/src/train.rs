//! Pairwise training with data-parallel gradient summation, checkpoints and resume.

use std::collections::BTreeSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample_training_pair, AugConfig, Sequence, TrainingPair};
use crate::error::{Error, Result};
use crate::eval::with_workers;
use crate::losses::{compute_losses, LossConfig, LossValues};
use crate::model::{ForwardOptions, ModelConfig, ModelParams, Net};
use crate::tensor::{load_checkpoint, save_checkpoint, OptimizerKind, OptimizerState, ParamStore, Tape, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: u64,
    /// Training pairs per optimizer step.
    pub batch: usize,
    pub lr: f64,
    /// Cosine decay from `lr` to `lr · lr_final_frac` over `steps`; 1 keeps it constant.
    pub lr_final_frac: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Seed of the weight initialization.
    pub init_seed: u64,
    /// Steps between checkpoints; 0 saves only at the end.
    pub checkpoint_every: u64,
    pub aug: AugConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 2000,
            batch: 4,
            lr: 1e-3,
            lr_final_frac: 1.0,
            optimizer: OptimizerKind::adam(),
            seed: 0,
            init_seed: 0,
            checkpoint_every: 500,
            aug: AugConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch == 0 || !(self.lr > 0.0) || !(0.0..=1.0).contains(&self.lr_final_frac) {
            return Err(Error::Config("train: batch >= 1, lr > 0 and lr_final_frac in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if self.steps == 0 || self.lr_final_frac == 1.0 {
            return self.lr;
        }
        let p = (step.min(self.steps) as f64) / self.steps as f64;
        let f = self.lr_final_frac;
        self.lr * (f + (1.0 - f) * 0.5 * (1.0 + (std::f64::consts::PI * p).cos()))
    }
}

/// Seed for everything drawn at optimizer step `step`.
pub fn step_seed(seed: u64, step: u64) -> u64 {
    let mut z = seed ^ step.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A training pair with the sampling start used for the search cloud.
#[derive(Clone, Debug)]
pub struct Example {
    pub pair: TrainingPair,
    pub fps_start: usize,
}

const SAMPLE_ATTEMPTS: usize = 64;

/// Draws the batch of step `step`, independent of every other step.
pub fn draw_batch(
    data: &[Sequence],
    mcfg: &ModelConfig,
    tcfg: &TrainConfig,
    step: u64,
) -> Result<Vec<Example>> {
    if data.is_empty() {
        return Err(Error::Invalid("no training sequences".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(step_seed(tcfg.seed, step));
    let mut out = Vec::with_capacity(tcfg.batch);
    let mut attempts = 0;
    while out.len() < tcfg.batch {
        attempts += 1;
        if attempts > SAMPLE_ATTEMPTS * tcfg.batch {
            return Err(Error::Invalid("training data yields no non-empty crops".into()));
        }
        let seq = &data[rng.gen_range(0..data.len())];
        if seq.frames.len() < 2 {
            continue;
        }
        let frame = rng.gen_range(1..seq.frames.len());
        let pair_seed = rng.gen();
        let fps_start = rng.gen_range(0..mcfg.n_search);
        if let Some(pair) = sample_training_pair(seq, frame, mcfg, &tcfg.aug, pair_seed)? {
            out.push(Example { pair, fps_start });
        }
    }
    Ok(out)
}

/// Loss of one example and, when requested, the flat per-parameter gradients.
pub fn example_loss(
    params: &ModelParams,
    mcfg: &ModelConfig,
    lcfg: &LossConfig,
    ex: &Example,
    with_grad: bool,
) -> Result<(LossValues, Option<Vec<Vec<f64>>>)> {
    let tape = if with_grad { Tape::new() } else { Tape::inference() };
    let bound = params.store.bind(&tape);
    let net = Net::new(&tape, params, &bound, mcfg);
    let opts = ForwardOptions {
        fps_start: ex.fps_start,
        ..ForwardOptions::default()
    };
    let out = net.forward(ex.pair.template.coords(), ex.pair.search.coords(), opts)?;
    let terms = compute_losses(&tape, &out, &ex.pair.targets, &mcfg.bev_grid, lcfg)?;
    let values = terms.values(&tape);
    if !with_grad {
        return Ok((values, None));
    }
    let mut grads = tape.backward(terms.total)?;
    Ok((values, Some(params.store.extract(&bound, &mut grads))))
}

fn mean_values(vals: &[LossValues]) -> LossValues {
    let n = vals.len() as f64;
    let sum = |f: fn(&LossValues) -> f64| vals.iter().map(f).sum::<f64>() / n;
    LossValues {
        seg: sum(|v| v.seg),
        center: sum(|v| v.center),
        offset: sum(|v| v.offset),
        z: sum(|v| v.z),
        total: sum(|v| v.total),
    }
}

/// Model, optimizer and the bookkeeping needed to resume bit-identically.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub mcfg: ModelConfig,
    pub lcfg: LossConfig,
    pub tcfg: TrainConfig,
    pub params: ModelParams,
    pub opt: OptimizerState,
    /// Categories of every sequence the model has been trained on.
    pub categories: BTreeSet<String>,
}

pub const MODEL_FILE: &str = "model.json";
pub const OPTIM_FILE: &str = "optim.json";
pub const LOG_FILE: &str = "train_log.csv";
pub const LOG_HEADER: &str = "step,L_seg,L_center,L_offset,L_z,L_total";

impl Trainer {
    pub fn new(mcfg: ModelConfig, lcfg: LossConfig, tcfg: TrainConfig) -> Result<Self> {
        mcfg.validate()?;
        lcfg.validate()?;
        tcfg.validate()?;
        let params = ModelParams::init(&mcfg, tcfg.init_seed)?;
        let opt = OptimizerState::new(tcfg.optimizer, tcfg.lr);
        Ok(Trainer {
            mcfg,
            lcfg,
            tcfg,
            params,
            opt,
            categories: BTreeSet::new(),
        })
    }

    /// Number of optimizer steps taken so far.
    pub fn step_count(&self) -> u64 {
        self.opt.step
    }

    /// One optimizer step on an explicit batch; returns the batch-mean losses
    /// measured before the update.
    pub fn step_on(&mut self, batch: &[Example]) -> Result<LossValues> {
        if batch.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let (params, mcfg, lcfg) = (&self.params, &self.mcfg, &self.lcfg);
        let results: Vec<Result<(LossValues, Option<Vec<Vec<f64>>>)>> =
            with_workers(|| batch.par_iter().map(|ex| example_loss(params, mcfg, lcfg, ex, true)).collect());
        let mut vals = Vec::with_capacity(batch.len());
        let mut sum: Option<Vec<Vec<f64>>> = None;
        for r in results {
            let (v, g) = r?;
            let g = g.expect("gradients requested");
            match &mut sum {
                None => sum = Some(g),
                Some(acc) => {
                    for (a, b) in acc.iter_mut().zip(&g) {
                        for (x, y) in a.iter_mut().zip(b) {
                            *x += y;
                        }
                    }
                }
            }
            vals.push(v);
        }
        let mean = mean_values(&vals);
        if !mean.total.is_finite() {
            return Err(Error::Numerical(format!(
                "non-finite loss at step {}: {mean:?}",
                self.opt.step + 1
            )));
        }
        let scale = 1.0 / batch.len() as f64;
        let ids: Vec<_> = self.params.store.ids().collect();
        for (id, mut g) in ids.into_iter().zip(sum.expect("non-empty batch")) {
            g.iter_mut().for_each(|x| *x *= scale);
            self.params.store.accumulate_array(id, &g)?;
        }
        self.opt.lr = self.tcfg.lr_at(self.opt.step);
        self.opt.step(&mut self.params.store)?;
        if !self.params.store.is_finite() {
            return Err(Error::Numerical(format!("non-finite parameters after step {}", self.opt.step)));
        }
        Ok(mean)
    }

    /// Draws the next batch from `data` and takes one step.
    pub fn step(&mut self, data: &[Sequence]) -> Result<LossValues> {
        let batch = draw_batch(data, &self.mcfg, &self.tcfg, self.opt.step)?;
        self.categories.extend(data.iter().map(|s| s.category.clone()));
        self.step_on(&batch)
    }

    /// Batch-mean loss without updating anything.
    pub fn evaluate_batch(&self, batch: &[Example]) -> Result<LossValues> {
        let vals = batch
            .iter()
            .map(|ex| example_loss(&self.params, &self.mcfg, &self.lcfg, ex, false).map(|r| r.0))
            .collect::<Result<Vec<_>>>()?;
        Ok(mean_values(&vals))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let meta = serde_json::json!({
            "model": self.mcfg,
            "loss": self.lcfg,
            "train": self.tcfg,
            "step": self.opt.step,
            "categories": self.categories,
        });
        save_checkpoint(&dir.join(MODEL_FILE), &self.params.store, meta)?;
        let mut moments = ParamStore::new();
        for (p, (m, v)) in self
            .params
            .store
            .iter()
            .zip(self.opt.first_moment.iter().zip(&self.opt.second_moment))
        {
            moments.add(format!("m.{}", p.name), Tensor::new(p.value.shape(), m.clone())?);
            moments.add(format!("v.{}", p.name), Tensor::new(p.value.shape(), v.clone())?);
        }
        let meta = serde_json::json!({
            "step": self.opt.step,
            "lr": self.opt.lr,
            "kind": self.opt.kind,
        });
        save_checkpoint(&dir.join(OPTIM_FILE), &moments, meta)
    }

    /// Restores a trainer saved by [`Trainer::save`].
    pub fn load(dir: &Path) -> Result<Self> {
        let (store, meta) = load_checkpoint(&dir.join(MODEL_FILE))?;
        let field = |k: &str| meta.get(k).cloned().ok_or_else(|| Error::Format {
            path: dir.join(MODEL_FILE),
            msg: format!("checkpoint meta lacks `{k}`"),
        });
        let mcfg: ModelConfig = serde_json::from_value(field("model")?)?;
        let lcfg: LossConfig = serde_json::from_value(field("loss")?)?;
        let tcfg: TrainConfig = serde_json::from_value(field("train")?)?;
        let categories: BTreeSet<String> = serde_json::from_value(field("categories")?)?;
        let params = ModelParams::from_store(&mcfg, store)?;
        let (moments, ometa) = load_checkpoint(&dir.join(OPTIM_FILE))?;
        let kind: OptimizerKind = serde_json::from_value(ometa["kind"].clone())?;
        let mut opt = OptimizerState::new(kind, ometa["lr"].as_f64().unwrap_or(tcfg.lr));
        opt.step = ometa["step"].as_u64().unwrap_or(0);
        if !moments.is_empty() {
            let mut it = moments.iter();
            while let (Some(m), Some(v)) = (it.next(), it.next()) {
                opt.first_moment.push(m.value.data().to_vec());
                opt.second_moment.push(v.value.data().to_vec());
            }
        }
        Ok(Trainer {
            mcfg,
            lcfg,
            tcfg,
            params,
            opt,
            categories,
        })
    }
}

/// Reads model parameters and config from a checkpoint directory or manifest path.
pub fn load_model(path: &Path) -> Result<(ModelParams, ModelConfig, BTreeSet<String>)> {
    let manifest = if path.is_dir() { path.join(MODEL_FILE) } else { path.to_path_buf() };
    let (store, meta) = load_checkpoint(&manifest)?;
    let mcfg: ModelConfig = serde_json::from_value(meta.get("model").cloned().ok_or_else(|| Error::Format {
        path: manifest.clone(),
        msg: "checkpoint meta lacks `model`".into(),
    })?)?;
    let categories = meta
        .get("categories")
        .map(|c| serde_json::from_value(c.clone()))
        .transpose()?
        .unwrap_or_default();
    Ok((ModelParams::from_store(&mcfg, store)?, mcfg, categories))
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainSummary {
    pub steps: u64,
    pub first: Option<LossValues>,
    pub last: Option<LossValues>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

fn log_row(step: u64, v: &LossValues) -> String {
    format!("{step},{:e},{:e},{:e},{:e},{:e}", v.seg, v.center, v.offset, v.z, v.total)
}

/// Runs (or continues) training until `trainer.tcfg.steps`, writing the CSV log and
/// checkpoints into `out`. `on_step` sees every step's losses.
pub fn run_training(
    trainer: &mut Trainer,
    data: &[Sequence],
    out: &Path,
    mut on_step: impl FnMut(u64, &LossValues),
) -> Result<TrainSummary> {
    fs::create_dir_all(out)?;
    let log_path = out.join(LOG_FILE);
    let fresh = trainer.step_count() == 0 || !log_path.is_file();
    let mut log = fs::OpenOptions::new()
        .create(true)
        .append(!fresh)
        .write(true)
        .truncate(fresh)
        .open(&log_path)?;
    if fresh {
        writeln!(log, "{LOG_HEADER}")?;
    }
    let mut first = None;
    let mut last = None;
    while trainer.step_count() < trainer.tcfg.steps {
        let v = trainer.step(data)?;
        let step = trainer.step_count();
        writeln!(log, "{}", log_row(step, &v))?;
        on_step(step, &v);
        first.get_or_insert(v);
        last = Some(v);
        let every = trainer.tcfg.checkpoint_every;
        if every > 0 && step % every == 0 {
            trainer.save(out)?;
        }
    }
    log.flush()?;
    trainer.save(out)?;
    Ok(TrainSummary {
        steps: trainer.step_count(),
        first,
        last,
        checkpoint: out.join(MODEL_FILE),
        log: log_path,
    })
}
