//! Training, evaluation and the scripted experiments.

pub mod config;
pub mod experiments;
pub mod metrics;
pub mod report;
pub mod trainer;

pub use config::{Ablation, TrainConfig};
pub use experiments::{
    run_ablation_suite, run_memory_sweep, run_noise_sweep, run_variant, Experiment, MemorySetting,
    RunOutcome,
};
pub use metrics::{evaluate, validation_mse, MetricAccumulator, Metrics};
pub use report::{write_reports, MetricReport};
pub use trainer::{train, EarlyStopping, TrainHistory};
