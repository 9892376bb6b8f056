//! Hierarchical memorizing network (HMNet) for long-horizon multivariate
//! time series forecasting.
//!
//! The crate is self-contained: a small reverse-mode autodiff engine
//! ([`autograd`]), the per-level pattern memory ([`memory`]), the network
//! ([`model`]), data preparation ([`data`]), and the training and experiment
//! runners ([`train`]). The `hmnet` binary wires these to config files.
//!
//! Kernels and sweep runners use rayon when the `parallel` feature (on by
//! default) is enabled; results are bit-identical with it off.

pub mod app;
pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod memory;
pub mod model;
pub mod optim;
mod par;
pub mod param;
pub mod selfcheck;
pub mod tensor;
pub mod train;

pub use autograd::{Contraction, Graph, Var};
pub use error::{Error, Result};
pub use memory::{normalize_pattern, PatternMemory, RetrievalResult};
pub use model::{HmNet, HmNetConfig, LevelConfig, Mode};
pub use optim::{Adam, AdamConfig};
pub use par::parallel_enabled;
pub use param::{ParamId, ParamStore, Parameter};
pub use tensor::Tensor;
