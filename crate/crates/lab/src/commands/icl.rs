//! `icl-train` and `icl-eval`: contrastive-divergence training of the
//! in-context energy transformer and its held-out evaluation.

use std::path::PathBuf;

use amprob_core::iclebm::{
    energy_gap, energy_grid, icl_sample, make_task_with, train_icl, GapConfig, GridSpec, IclEbmConfig, IclEbmModel,
    IclSampleConfig, IclTrainConfig,
};
use amprob_core::numerics::{Rng, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::data::{num, write_grid, write_json, write_points, CsvOut};
use crate::error::{LabError, Result};
use crate::runner::{cell_seed, load_config, output_dir, pool, CommonArgs, Run};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IclTrainCmdConfig {
    /// Model init, task stream and sampler seeds are all derived from this.
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub model: IclEbmConfig,
    pub train: IclTrainConfig,
    /// Print a progress line to stderr every this many steps (0 for never).
    pub log_every: u64,
}

impl Default for IclTrainCmdConfig {
    fn default() -> Self {
        IclTrainCmdConfig {
            seed: 0,
            out: None,
            model: IclEbmConfig::default(),
            train: IclTrainConfig::default(),
            log_every: 50,
        }
    }
}

pub fn run_train(args: &CommonArgs) -> Result<()> {
    let loaded = load_config::<IclTrainCmdConfig>(args.config.as_deref())?;
    let cfgpath = args.config.clone().unwrap_or_default();
    let mut cfg = loaded.config;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.train.data_seed = cell_seed(cfg.seed, 1);
    cfg.train.cd.seed = cell_seed(cfg.seed, 2);
    let bad = |e: amprob_core::Error| LabError::config(&cfgpath, e.to_string());
    cfg.model.validate().map_err(bad)?;
    cfg.train.validate().map_err(bad)?;
    if cfg.train.seq_len > cfg.model.max_len {
        return Err(LabError::config(&cfgpath, "train.seq_len exceeds model.max_len"));
    }
    let dir = output_dir(args.out.as_deref(), cfg.out.as_deref(), "icl-train");
    let run = Run::start("icl-train", dir, cfg.seed, args.jobs, &cfg)?;

    let model = IclEbmModel::new(cfg.model, cell_seed(cfg.seed, 0))?;
    let every = cfg.log_every;
    let (model, history) = train_icl(model, &cfg.train, |r| {
        if every > 0 && (r.step + 1) % every == 0 {
            eprintln!(
                "step {:>6}  loss {:>10.5}  |g| {:>9.4}  E+ {:>9.4}  E- {:>9.4}",
                r.step + 1,
                r.loss,
                r.grad_norm,
                r.mean_real_energy,
                r.mean_negative_energy
            );
        }
    })?;

    let mut log = CsvOut::create(
        &run.path("train_log.csv"),
        &["step", "loss", "grad_norm", "mean_real_energy", "mean_negative_energy", "skipped", "applied"],
    )?;
    for r in &history {
        log.row([
            r.step.to_string(),
            num(r.loss),
            num(r.grad_norm),
            num(r.mean_real_energy),
            num(r.mean_negative_energy),
            r.skipped.to_string(),
            r.applied.to_string(),
        ])?;
    }
    log.finish()?;
    let meta = serde_json::json!({
        "steps": history.len(),
        "seed": cfg.seed,
        "train": cfg.train,
    });
    checkpoint::save(&run.path("checkpoint.bin"), &model, meta)?;
    run.finish(&["train_log.csv", "checkpoint.bin"])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IclEvalCmdConfig {
    pub seed: u64,
    pub out: Option<PathBuf>,
    /// Relative paths are resolved against the config's directory.
    pub checkpoint: PathBuf,
    pub context_lens: Vec<usize>,
    /// Held-out gap settings; `seed` is derived from the run seed.
    pub gap: GapConfig,
    pub level: f64,
    pub resamples: usize,
    /// Grids and samples are drawn for one demo task at these context lengths.
    pub grid_context_lens: Vec<usize>,
    pub grid: GridSpec,
    pub samples: usize,
    pub sampler: IclSampleConfig,
}

impl Default for IclEvalCmdConfig {
    fn default() -> Self {
        IclEvalCmdConfig {
            seed: 0,
            out: None,
            checkpoint: "icl-train/checkpoint.bin".into(),
            context_lens: vec![4, 16, 64],
            gap: GapConfig::default(),
            level: 0.99,
            resamples: 2000,
            grid_context_lens: vec![4, 64],
            grid: GridSpec::default(),
            samples: 128,
            sampler: IclSampleConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
struct GapRecord {
    context_len: usize,
    mean_real_energy: f64,
    mean_uniform_energy: f64,
    gap: f64,
    lower: f64,
    upper: f64,
    level: f64,
    positive: bool,
}

pub fn run_eval(args: &CommonArgs) -> Result<()> {
    let loaded = load_config::<IclEvalCmdConfig>(args.config.as_deref())?;
    let cfgpath = args.config.clone().unwrap_or_default();
    let ckpt = loaded.resolve(&loaded.config.checkpoint);
    let mut cfg = loaded.config;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.gap.seed = cell_seed(cfg.seed, 0);
    if cfg.context_lens.is_empty() {
        return Err(LabError::config(&cfgpath, "context_lens must be non-empty"));
    }
    if !(cfg.level > 0.0 && cfg.level < 1.0) || cfg.resamples == 0 {
        return Err(LabError::config(&cfgpath, "level must lie in (0, 1) and resamples be positive"));
    }
    cfg.grid.validate().map_err(|e| LabError::config(&cfgpath, format!("grid: {e}")))?;
    let (model, _) = checkpoint::load(&ckpt)?;
    let max_ctx = model.config().max_len - 1;
    if let Some(&n) = cfg.context_lens.iter().chain(&cfg.grid_context_lens).find(|&&n| n == 0 || n > max_ctx) {
        return Err(LabError::config(&cfgpath, format!("context length {n} is outside 1..={max_ctx} for this model")));
    }
    let dir = output_dir(args.out.as_deref(), cfg.out.as_deref(), "icl-eval");
    let run = Run::start("icl-eval", dir, cfg.seed, args.jobs, &cfg)?;
    let workers = pool(args.jobs)?;

    let gaps: Vec<GapRecord> = workers.install(|| {
        cfg.context_lens
            .par_iter()
            .enumerate()
            .map(|(i, &n)| -> Result<GapRecord> {
                let g = energy_gap(&model, n, &cfg.gap)?;
                let b = g.bootstrap(cfg.level, cfg.resamples, cell_seed(cfg.seed, 100 + i))?;
                Ok(GapRecord {
                    context_len: n,
                    mean_real_energy: g.mean_real(),
                    mean_uniform_energy: g.mean_uniform(),
                    gap: b.estimate,
                    lower: b.lower,
                    upper: b.upper,
                    level: b.level,
                    positive: b.lower > 0.0,
                })
            })
            .collect::<Result<_>>()
    })?;
    write_json(&run.path("gaps.json"), &gaps)?;
    let mut out = CsvOut::create(
        &run.path("gaps.csv"),
        &["context_len", "mean_real_energy", "mean_uniform_energy", "gap", "lower", "upper", "level"],
    )?;
    for g in &gaps {
        out.row([
            g.context_len.to_string(),
            num(g.mean_real_energy),
            num(g.mean_uniform_energy),
            num(g.gap),
            num(g.lower),
            num(g.upper),
            num(g.level),
        ])?;
    }
    out.finish()?;
    let mut files = vec!["gaps.json".to_string(), "gaps.csv".to_string()];

    if !cfg.grid_context_lens.is_empty() {
        let mut rng = Rng::new(cell_seed(cfg.seed, 1));
        let task = make_task_with(&cfg.gap.task, cell_seed(cfg.seed, 2))?;
        let longest = *cfg.grid_context_lens.iter().max().expect("non-empty");
        let context = task.sample_sequence(longest, &mut rng);
        let means = Tensor::matrix(task.means().len(), task.dim(), task.means().concat())?;
        write_points(&run.path("task_means.csv"), &means)?;
        write_points(&run.path("context.csv"), &context)?;
        files.extend(["task_means.csv".to_string(), "context.csv".to_string()]);
        for &n in &cfg.grid_context_lens {
            let ctx = Tensor::matrix(n, context.cols(), context.data()[..n * context.cols()].to_vec())?;
            let grid = energy_grid(&model, &ctx, &cfg.grid)?;
            let name = format!("grid_ctx{n:03}.csv");
            write_grid(&run.path(&name), &grid)?;
            files.push(name);
            if cfg.samples > 0 {
                let pts: Vec<Vec<f64>> = workers.install(|| {
                    (0..cfg.samples)
                        .into_par_iter()
                        .map(|j| {
                            let mut sc = cfg.sampler;
                            sc.sampler.seed = cell_seed(cfg.seed, 10_000 + j);
                            icl_sample(&model, &ctx, &sc)
                        })
                        .collect::<amprob_core::Result<_>>()
                })?;
                let flat = Tensor::matrix(pts.len(), context.cols(), pts.concat())?;
                let name = format!("samples_ctx{n:03}.csv");
                write_points(&run.path(&name), &flat)?;
                files.push(name);
            }
        }
    }
    let names: Vec<&str> = files.iter().map(String::as_str).collect();
    run.finish(&names)
}
