use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::noise::{NoiseSetting, NoiseSpec};
use crate::data::window::{Split, WindowDataset};
use crate::error::Result;
use crate::model::{HmNet, HmNetConfig};
use crate::par::run_jobs;

use super::config::{Ablation, TrainConfig};
use super::metrics::evaluate;
use super::report::MetricReport;
use super::trainer::{train, TrainHistory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MemorySetting {
    pub capacity: usize,
    pub top_k: usize,
}

impl MemorySetting {
    pub const SWEEP: [MemorySetting; 3] = [
        MemorySetting { capacity: 256, top_k: 1 },
        MemorySetting { capacity: 4096, top_k: 16 },
        MemorySetting { capacity: 16384, top_k: 64 },
    ];

    pub fn label(self) -> String {
        format!("m{}_k{}", self.capacity, self.top_k)
    }
}

pub const NOISE_PROBABILITIES: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.4];

/// Shared inputs of a family of runs.
#[derive(Debug, Clone)]
pub struct Experiment<'a> {
    pub data: &'a WindowDataset,
    pub model: HmNetConfig,
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    /// Independent runs executed at once.
    pub jobs: usize,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub model: HmNet,
    pub history: TrainHistory,
    pub report: MetricReport,
}

impl Experiment<'_> {
    fn suffix(&self, seed: u64) -> String {
        if self.seeds.len() > 1 { format!("_s{seed}") } else { String::new() }
    }
}

/// Builds, trains and tests one configuration. The seed drives both
/// initialization and batch order.
pub fn run_variant(
    data: &WindowDataset,
    base: &HmNetConfig,
    train_cfg: &TrainConfig,
    ablation: Ablation,
    memory: Option<MemorySetting>,
    seed: u64,
    variant: String,
) -> Result<RunOutcome> {
    let started = Instant::now();
    let mut config = base.clone();
    config.seed = seed;
    ablation.apply(&mut config);
    if let Some(m) = memory {
        config.set_memory(m.capacity, m.top_k);
    }
    let mut model = HmNet::new(config)?;
    let cfg = TrainConfig { seed, ablation, ..train_cfg.clone() };
    let history = train(&mut model, data, &cfg)?;
    let metrics = evaluate(&model, data, Split::Test, None, cfg.eval_batch_size)?;
    let mut report = MetricReport::new(&data.name, model.config(), ablation, variant, metrics);
    report.memory = memory;
    report.epochs_run = history.epochs_run();
    report.wall_time_secs = started.elapsed().as_secs_f64();
    Ok(RunOutcome { model, history, report })
}

/// Full model and the three ablations, identically seeded.
pub fn run_ablation_suite(exp: &Experiment<'_>) -> Result<Vec<MetricReport>> {
    let specs: Vec<(Ablation, u64)> = exp
        .seeds
        .iter()
        .flat_map(|&s| Ablation::ALL.into_iter().map(move |a| (a, s)))
        .collect();
    run_jobs(exp.jobs, specs, |(ablation, seed)| {
        let variant = format!("{ablation}{}", exp.suffix(seed));
        run_variant(exp.data, &exp.model, &exp.train, ablation, None, seed, variant).map(|o| o.report)
    })
}

/// Trains the full model and the no-denoise variant per seed, then tests
/// both under every noise setting and probability.
pub fn run_noise_sweep(
    exp: &Experiment<'_>,
    settings: &[NoiseSetting],
    probabilities: &[f64],
) -> Result<Vec<MetricReport>> {
    let variants = [Ablation::Full, Ablation::NoDenoise];
    let specs: Vec<(Ablation, u64)> = exp
        .seeds
        .iter()
        .flat_map(|&s| variants.into_iter().map(move |a| (a, s)))
        .collect();
    let trained = run_jobs(exp.jobs, specs, |(ablation, seed)| {
        run_variant(exp.data, &exp.model, &exp.train, ablation, None, seed, ablation.to_string())
    })?;
    let mut evals = Vec::new();
    for run in &trained {
        for &setting in settings {
            for &p in probabilities {
                evals.push((run, setting, p));
            }
        }
    }
    run_jobs(exp.jobs, evals, |(run, setting, p)| {
        let seed = run.report.seed;
        let spec = match setting {
            NoiseSetting::ResidualOnly => NoiseSpec::residual(p, seed),
            NoiseSetting::TrendAndResidual => NoiseSpec::trend_and_residual(p, seed),
        };
        let started = Instant::now();
        let metrics = evaluate(&run.model, exp.data, Split::Test, Some(&spec), exp.train.eval_batch_size)?;
        let tag = match setting {
            NoiseSetting::ResidualOnly => "residual",
            NoiseSetting::TrendAndResidual => "trend_residual",
        };
        let ablation = run.report.ablation;
        let variant = format!("{ablation}_{tag}_p{p:.2}{}", exp.suffix(seed));
        let mut report = MetricReport::new(&exp.data.name, run.model.config(), ablation, variant, metrics);
        report.noise = Some(spec);
        report.epochs_run = run.history.epochs_run();
        report.wall_time_secs = started.elapsed().as_secs_f64();
        Ok(report)
    })
}

/// One full-model run per memory setting and seed.
pub fn run_memory_sweep(exp: &Experiment<'_>, settings: &[MemorySetting]) -> Result<Vec<MetricReport>> {
    let specs: Vec<(MemorySetting, u64)> = exp
        .seeds
        .iter()
        .flat_map(|&s| settings.iter().map(move |&m| (m, s)))
        .collect();
    run_jobs(exp.jobs, specs, |(memory, seed)| {
        let variant = format!("{}{}", memory.label(), exp.suffix(seed));
        run_variant(exp.data, &exp.model, &exp.train, Ablation::Full, Some(memory), seed, variant)
            .map(|o| o.report)
    })
}
