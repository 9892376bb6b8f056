//! Command implementations behind the `hmnet` binary.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::data::cache;
use crate::data::window::{Split, WindowDataset};
use crate::error::{Error, Result};
use crate::model::HmNet;
use crate::selfcheck::{self, Faults, SelfcheckReport};
use crate::train::{
    evaluate, run_ablation_suite, run_memory_sweep, run_noise_sweep, train, write_reports, Ablation,
    Experiment, MetricReport, TrainConfig,
};

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub horizon: Option<usize>,
}

/// Reads (or defaults) the config, applies overrides and validates it.
pub fn resolve_config(path: Option<&Path>, o: &Overrides) -> Result<RunConfig> {
    let mut cfg = match path {
        Some(p) => RunConfig::read(p)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &o.out {
        cfg.run.out = out.clone();
    }
    if let Some(seed) = o.seed {
        cfg.run.seeds = vec![seed];
    }
    if let Some(jobs) = o.jobs {
        cfg.run.jobs = jobs;
    }
    if let Some(h) = o.horizon {
        cfg.model.horizon = h;
        cfg.run.horizons = Some(vec![h]);
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Writes the resolved config next to the results.
fn echo_config(cfg: &RunConfig) -> Result<()> {
    std::fs::create_dir_all(&cfg.run.out)?;
    std::fs::write(cfg.run.out.join("config.toml"), cfg.to_toml()?)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct IngestSummary {
    pub dataset: String,
    pub rows: usize,
    pub variables: usize,
    pub train_windows: usize,
    pub val_windows: usize,
    pub test_windows: usize,
    pub cache: PathBuf,
    pub checksum: String,
}

/// Validates the data, builds windows and writes the cache. Nothing is
/// written when validation fails.
pub fn ingest(cfg: &RunConfig) -> Result<IngestSummary> {
    let horizon = cfg.horizons()[0];
    let (series, ratios) = cfg.load_series()?;
    let ds = WindowDataset::build(&series, ratios, cfg.model.input_length, horizon)?;
    let path = cfg.cache_path(horizon);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let checksum = cache::write_windows(&ds, &path)?;
    Ok(IngestSummary {
        dataset: ds.name.clone(),
        rows: ds.total_rows(),
        variables: ds.num_vars,
        train_windows: ds.len(Split::Train),
        val_windows: ds.len(Split::Val),
        test_windows: ds.len(Split::Test),
        cache: path,
        checksum,
    })
}

fn variant_name(cfg: &RunConfig) -> String {
    cfg.train.ablation.to_string()
}

fn checkpoint_path(cfg: &RunConfig, horizon: usize) -> PathBuf {
    cfg.run.out.join(format!("{}_{}_{}.ckpt", cfg.data.dataset, horizon, variant_name(cfg)))
}

fn build_model(cfg: &RunConfig, data: &WindowDataset, horizon: usize, seed: u64) -> Result<HmNet> {
    let mut mc = cfg.model.build(data.num_vars, horizon, seed)?;
    if cfg.train.ablation != Ablation::Full {
        cfg.train.ablation.apply(&mut mc);
    }
    HmNet::new(mc)
}

/// Trains one model per horizon with the first seed, saves checkpoints and
/// writes test reports.
pub fn cmd_train(cfg: &RunConfig) -> Result<Vec<MetricReport>> {
    echo_config(cfg)?;
    let seed = cfg.first_seed();
    let mut reports = Vec::new();
    for h in cfg.horizons() {
        let started = std::time::Instant::now();
        let data = cfg.load_windows(h)?;
        let mut model = build_model(cfg, &data, h, seed)?;
        let tc = TrainConfig { seed, ..cfg.train.clone() };
        let history = train(&mut model, &data, &tc)?;
        checkpoint::save(&model, &checkpoint_path(cfg, h))?;
        let metrics = evaluate(&model, &data, Split::Test, None, tc.eval_batch_size)?;
        let mut r = MetricReport::new(&data.name, model.config(), tc.ablation, variant_name(cfg), metrics);
        r.epochs_run = history.epochs_run();
        r.wall_time_secs = started.elapsed().as_secs_f64();
        reports.push(r);
    }
    write_reports(&cfg.run.out, "train", &reports)?;
    Ok(reports)
}

/// Evaluates saved checkpoints on the test split.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Vec<MetricReport>> {
    echo_config(cfg)?;
    let mut reports = Vec::new();
    for h in cfg.horizons() {
        let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| checkpoint_path(cfg, h));
        let model = checkpoint::load(&path)?;
        let data = cfg.load_windows(model.config().horizon)?;
        if model.config().num_variables != data.num_vars {
            return Err(Error::config(format!(
                "checkpoint has {} variables, dataset has {}",
                model.config().num_variables,
                data.num_vars
            )));
        }
        let metrics = evaluate(&model, &data, Split::Test, None, cfg.train.eval_batch_size)?;
        let ablation = cfg.train.ablation;
        let variant = format!("{}_eval", variant_name(cfg));
        reports.push(MetricReport::new(&data.name, model.config(), ablation, variant, metrics));
    }
    write_reports(&cfg.run.out, "eval", &reports)?;
    Ok(reports)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    Ablate,
    Noise,
    Memory,
}

impl Sweep {
    fn name(self) -> &'static str {
        match self {
            Sweep::Ablate => "ablate",
            Sweep::Noise => "noise",
            Sweep::Memory => "memsweep",
        }
    }
}

pub fn cmd_sweep(cfg: &RunConfig, sweep: Sweep) -> Result<Vec<MetricReport>> {
    echo_config(cfg)?;
    let mut reports = Vec::new();
    for h in cfg.horizons() {
        let data = cfg.load_windows(h)?;
        let exp = Experiment {
            data: &data,
            model: cfg.model.build(data.num_vars, h, 0)?,
            train: cfg.train.clone(),
            seeds: cfg.run.seeds.clone(),
            jobs: cfg.run.jobs,
        };
        reports.extend(match sweep {
            Sweep::Ablate => run_ablation_suite(&exp)?,
            Sweep::Noise => run_noise_sweep(&exp, &cfg.noise.settings, &cfg.noise.probabilities)?,
            Sweep::Memory => run_memory_sweep(&exp, &cfg.memsweep.settings)?,
        });
    }
    write_reports(&cfg.run.out, sweep.name(), &reports)?;
    Ok(reports)
}

pub fn cmd_selfcheck(faults: Faults) -> SelfcheckReport {
    selfcheck::run(faults)
}

/// Process exit code for an error: 1 for bad input, 2 for failures while
/// computing.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_validation() { 1 } else { 2 }
}
