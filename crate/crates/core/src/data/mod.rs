//! Ingestion, windowing, decomposition and noise for forecasting data.

pub mod cache;
pub mod noise;
pub mod registry;
pub mod series;
pub mod synthetic;
pub mod timefeat;
pub mod window;

pub use noise::{decompose, inject_noise, NoiseSetting, NoiseSpec};
pub use registry::{Registry, RegistryEntry};
pub use series::{load_csv, CsvSchema, Frequency, TimeSeriesDataset};
pub use synthetic::sinusoids;
pub use timefeat::{time_features, NUM_TIME_FEATURES};
pub use window::{Batch, Scaler, Split, SplitRatios, WindowDataset, WindowView};
