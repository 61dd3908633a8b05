use std::collections::BTreeSet;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use onestream::checks::full_grad_suite;
use onestream::config::ExperimentConfig;
use onestream::data::{
    dataset_splits, load_dataset, load_kitti_tracklets, save_dataset, synth_sequence, SceneSplit, Sequence, SplitSetting,
    SynthConfig,
};
use onestream::eval::{count_params_flops, evaluate, run_class_agnostic, track_all};
use onestream::model::ModelParams;
use onestream::tracker::{TrackRecord, TrackResult};
use onestream::train::{load_model, run_training, Trainer, MODEL_FILE};
use onestream::{Error, Result};

#[derive(Parser)]
#[command(name = "onestream", version, about = "One-stream single-object tracker for LiDAR point clouds")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Finite-difference check of every differentiable op and the reduced model.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Writes synthetic sequences as a dataset directory.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        frames: Option<usize>,
        /// Number of sequences, seeded consecutively from `--seed`.
        #[arg(long, default_value_t = 1)]
        count: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Trains a model and writes checkpoints plus a CSV log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        out: PathBuf,
        /// Continue from the checkpoint in `--out`.
        #[arg(long)]
        resume: bool,
    },
    /// Tracks every sequence and writes one JSON record per frame.
    Track {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scores predictions, or a checkpoint under the class-agnostic protocol.
    Eval {
        #[arg(long)]
        preds: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        split: SplitArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter and FLOP counts plus measured forward time.
    Bench {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        forwards: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Prints the pools of a class-agnostic setting.
    Splits {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "1")]
        setting: String,
    },
}

#[derive(Args)]
struct DataArgs {
    /// Dataset directory of sequence manifests.
    #[arg(long, conflicts_with = "kitti")]
    data: Option<PathBuf>,
    /// KITTI tracking root with label_02/, calib/ and velodyne/.
    #[arg(long)]
    kitti: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SplitKind {
    ClassSpecific,
    ClassAgnostic,
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long, value_enum, default_value = "class-specific")]
    split: SplitKind,
    #[arg(long, default_value = "1")]
    setting: String,
    /// Restricts a class-specific run to one category.
    #[arg(long)]
    category: Option<String>,
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    path.as_deref().map_or_else(|| Ok(ExperimentConfig::default()), ExperimentConfig::load)
}

impl DataArgs {
    fn load(&self) -> Result<Vec<Sequence>> {
        match (&self.data, &self.kitti) {
            (Some(d), _) => load_dataset(d),
            (None, Some(k)) => {
                let velo = k.join("velodyne");
                load_kitti_tracklets(&k.join("label_02"), &k.join("calib"), velo.is_dir().then_some(velo.as_path()))
            }
            (None, None) => Err(Error::Invalid("one of --data or --kitti is required".into())),
        }
    }
}

impl SplitArgs {
    /// Sequences this run trains on or scores.
    fn select(&self, seqs: Vec<Sequence>, agnostic_pool: fn(&onestream::data::Splits) -> &Vec<usize>) -> Result<Vec<Sequence>> {
        match self.split {
            SplitKind::ClassSpecific => Ok(match &self.category {
                Some(c) => seqs.into_iter().filter(|s| &s.category == c).collect(),
                None => seqs,
            }),
            SplitKind::ClassAgnostic => {
                let splits = dataset_splits(&SplitSetting::named(&self.setting)?, &seqs, &SceneSplit::default())?;
                Ok(agnostic_pool(&splits).iter().map(|&i| seqs[i].clone()).collect())
            }
        }
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}

fn read_preds(path: &Path) -> Result<Vec<TrackResult>> {
    let mut records = Vec::new();
    for (i, line) in BufReader::new(fs::File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: TrackRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        records.push(r);
    }
    TrackResult::from_records(&records)
}

fn gradcheck(seed: u64) -> Result<bool> {
    let reports = full_grad_suite(seed)?;
    println!("{:<28} {:>12} {:>10}  result", "op", "max_rel", "tol");
    for r in &reports {
        let verdict = if r.passed { "PASS" } else { "FAIL" };
        println!("{:<28} {:>12.3e} {:>10.1e}  {verdict}", r.op_name, r.max_rel_error, r.tolerance);
    }
    Ok(reports.iter().all(|r| r.passed))
}

fn synth(config: &Option<PathBuf>, seed: Option<u64>, frames: Option<usize>, count: u64, out: &Path) -> Result<()> {
    let base = load_config(config)?.synth;
    let first = seed.unwrap_or(base.seed);
    let cfgs: Vec<SynthConfig> = (0..count)
        .map(|i| SynthConfig {
            seed: first + i,
            n_frames: frames.unwrap_or(base.n_frames),
            ..base.clone()
        })
        .collect();
    let seqs = cfgs.iter().map(synth_sequence).collect::<Result<Vec<_>>>()?;
    let sources = cfgs.iter().map(serde_json::to_value).collect::<std::result::Result<Vec<_>, _>>()?;
    for dir in save_dataset(out, &seqs, &sources)? {
        println!("{}", dir.display());
    }
    Ok(())
}

fn train(config: &Option<PathBuf>, seed: Option<u64>, data: &DataArgs, split: &SplitArgs, out: &Path, resume: bool) -> Result<()> {
    let seqs = split.select(data.load()?, |s| &s.train)?;
    if seqs.is_empty() {
        return Err(Error::Invalid("no training sequences selected".into()));
    }
    let mut trainer = if resume && out.join(MODEL_FILE).is_file() {
        let mut t = Trainer::load(out)?;
        if let Some(c) = config {
            t.tcfg.steps = ExperimentConfig::load(c)?.train.steps;
        }
        t
    } else {
        let cfg = load_config(config)?;
        let mut tcfg = cfg.train;
        if let Some(s) = seed {
            tcfg.seed = s;
        }
        Trainer::new(cfg.model, cfg.loss, tcfg)?
    };
    let total = trainer.tcfg.steps;
    let every = (total / 20).max(1);
    let summary = run_training(&mut trainer, &seqs, out, |step, v| {
        if step % every == 0 || step == total {
            eprintln!("step {step}/{total}  L_total {:.4}", v.total);
        }
    })?;
    println!("{}", serde_json::to_string_pretty(&summary)?);
    Ok(())
}

fn track(checkpoint: &Path, config: &Option<PathBuf>, data: &DataArgs, out: &Path) -> Result<()> {
    let (params, mcfg, _) = load_model(checkpoint)?;
    let tcfg = load_config(config)?.tracker;
    let seqs = data.load()?;
    let refs: Vec<&Sequence> = seqs.iter().collect();
    let results = track_all(&params, &mcfg, &tcfg, &refs)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let mut w = BufWriter::new(fs::File::create(out)?);
    for r in results.iter().flat_map(|r| r.records()) {
        writeln!(w, "{}", serde_json::to_string(&r)?)?;
    }
    w.flush()?;
    let frames: usize = results.iter().map(|r| r.boxes.len()).sum();
    println!("tracked {} sequences, {frames} frames -> {}", results.len(), out.display());
    Ok(())
}

fn eval(
    preds: &Option<PathBuf>,
    checkpoint: &Option<PathBuf>,
    config: &Option<PathBuf>,
    data: &DataArgs,
    split: &SplitArgs,
    out: &Option<PathBuf>,
) -> Result<()> {
    let seqs = data.load()?;
    let report = match (preds, checkpoint, split.split) {
        (_, Some(ck), SplitKind::ClassAgnostic) => {
            let (params, mcfg, trained) = load_model(ck)?;
            let tcfg = load_config(config)?.tracker;
            let setting = SplitSetting::named(&split.setting)?;
            let r = run_class_agnostic(&setting, &trained, &params, &mcfg, &tcfg, &seqs, &SceneSplit::default())?;
            for (name, pool) in [("observed", &r.observed), ("unseen", &r.unseen)] {
                match pool {
                    Some(m) => println!("{name}: Success {:.2}  Precision {:.2}  ({} frames)", m.success, m.precision, m.frames),
                    None => println!("{name}: no sequences"),
                }
            }
            serde_json::to_value(&r)?
        }
        (Some(p), _, _) => {
            let selected = split.select(seqs, |s| &s.unseen_test)?;
            let preds = read_preds(p)?;
            let wanted: BTreeSet<&str> = preds.iter().map(|r| r.seq.as_str()).collect();
            let gts: Vec<Sequence> = selected.into_iter().filter(|s| wanted.contains(s.id.as_str())).collect();
            let m = evaluate(&preds, &gts)?;
            println!("Success {:.2}  Precision {:.2}  ({} frames)", m.success, m.precision, m.frames);
            serde_json::to_value(&m)?
        }
        _ => return Err(Error::Invalid("eval needs --preds, or --checkpoint with --split class-agnostic".into())),
    };
    let path = out.clone().unwrap_or_else(|| PathBuf::from("metrics.json"));
    write_json(&path, &report)?;
    println!("metrics -> {}", path.display());
    Ok(())
}

fn bench(config: &Option<PathBuf>, checkpoint: &Option<PathBuf>, forwards: usize, out: &Option<PathBuf>) -> Result<()> {
    let (params, mcfg) = match checkpoint {
        Some(c) => {
            let (p, m, _) = load_model(c)?;
            (p, m)
        }
        None => {
            let cfg = load_config(config)?;
            (ModelParams::init(&cfg.model, cfg.train.init_seed)?, cfg.model)
        }
    };
    let report = count_params_flops(&mcfg, &params, forwards)?;
    println!(
        "params {}  GFLOPs {:.3}  {:.2} ms/frame  {:.1} fps",
        report.params,
        report.flops as f64 / 1e9,
        report.ms_per_frame,
        report.fps
    );
    let b = &report.breakdown;
    println!("  gcn {}  ttm {}  mfa {}  seg {}  head {}", b.gcn, b.ttm, b.mfa, b.seg, b.head);
    if let Some(path) = out {
        write_json(path, &report)?;
    }
    Ok(())
}

fn splits(data: &DataArgs, setting: &str) -> Result<()> {
    let seqs = data.load()?;
    let setting = SplitSetting::named(setting)?;
    let s = dataset_splits(&setting, &seqs, &SceneSplit::default())?;
    println!("{}", setting.name);
    for (name, pool) in [
        ("train", &s.train),
        ("observed_test", &s.observed_test),
        ("unseen_test", &s.unseen_test),
        ("excluded", &s.excluded),
    ] {
        let cats: Vec<String> = s.categories(pool, &seqs).into_iter().collect();
        println!("  {name:<14} {:>5} sequences  [{}]", pool.len(), cats.join(", "));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.cmd {
        Cmd::Gradcheck { seed } => return gradcheck(seed),
        Cmd::Synth { config, seed, frames, count, out } => synth(&config, seed, frames, count, &out)?,
        Cmd::Train { config, seed, data, split, out, resume } => train(&config, seed, &data, &split, &out, resume)?,
        Cmd::Track { checkpoint, config, data, out } => track(&checkpoint, &config, &data, &out)?,
        Cmd::Eval { preds, checkpoint, config, data, split, out } => eval(&preds, &checkpoint, &config, &data, &split, &out)?,
        Cmd::Bench { config, checkpoint, forwards, out } => bench(&config, &checkpoint, forwards, &out)?,
        Cmd::Splits { data, setting } => splits(&data, &setting)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
