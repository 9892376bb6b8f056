//! The hierarchical memorizing network.
//!
//! Forward pass: instance-normalize the window, embed every variable
//! separately, run the stacked MC-Blocks (interaction, block convolution,
//! memory denoising), aggregate each level, sum the levels into a shared MLP
//! head, and undo the instance normalization.

pub mod config;
pub mod layers;
pub mod norm;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::memory::PatternMemory;
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

pub use config::{Activation, HmNetConfig, LevelConfig};
pub use layers::{DenoiseTrace, DenoiseWeights, HeadWeights};
pub use norm::{instance_denormalize, instance_normalize, InstanceStats};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Retrieved-then-inserted memory updates are produced.
    Train,
    /// Memory is read-only.
    Eval,
}

#[derive(Debug, Clone)]
struct EmbedIds {
    value_w: ParamId,
    time_w: Option<ParamId>,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct LevelIds {
    w_v: ParamId,
    w_alpha: ParamId,
    conv_w: ParamId,
    conv_b: ParamId,
    u: ParamId,
    v: ParamId,
    w: ParamId,
    w_beta: ParamId,
    agg_w: ParamId,
    agg_b: ParamId,
}

#[derive(Debug, Clone)]
struct HeadIds {
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
}

/// Per-level values recorded during a forward pass.
#[derive(Debug, Clone)]
pub struct LevelTrace {
    pub alpha: Option<Var>,
    pub conv: Var,
    pub output: Var,
    pub aggregate: Var,
    pub denoise: Option<DenoiseTrace>,
}

/// Memory writes produced by a training-mode forward pass, one entry per
/// level (empty for levels without denoising).
#[derive(Debug, Clone, Default)]
pub struct PendingInserts(pub Vec<Vec<f64>>);

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Forecast on the input's scale, `[B, H, N]`.
    pub prediction: Var,
    /// Forecast before instance denormalization.
    pub normalized: Var,
    pub levels: Vec<LevelTrace>,
    pub pending: PendingInserts,
}

#[derive(Debug, Clone)]
pub struct HmNet {
    config: HmNetConfig,
    store: ParamStore,
    embed: EmbedIds,
    levels: Vec<LevelIds>,
    head: HeadIds,
    memories: Vec<PatternMemory>,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.random_range(-bound..=bound))
}

impl HmNet {
    pub fn new(config: HmNetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (n, d, f, h) = (
            config.num_variables,
            config.hidden_dim,
            config.time_feature_dim,
            config.horizon,
        );
        let mut store = ParamStore::new();
        let embed = EmbedIds {
            value_w: store.add("embed.value_w", uniform(&mut rng, &[n, d], 1)),
            time_w: (f > 0).then(|| store.add("embed.time_w", uniform(&mut rng, &[f, d], f))),
            bias: store.add("embed.bias", Tensor::zeros(&[d])),
        };
        let positions = config.positions();
        let mut levels = Vec::with_capacity(config.levels.len());
        let mut memories = Vec::with_capacity(config.levels.len());
        for (l, (lc, &p)) in config.levels.iter().zip(&positions).enumerate() {
            let name = |s: &str| format!("level{l}.{s}");
            let diag: Vec<bool> = (0..n * n).map(|i| i / n == i % n).collect();
            let s = lc.block_size;
            let ids = LevelIds {
                w_v: store.add_masked(name("interact.w_v"), uniform(&mut rng, &[n, n], n), diag)?,
                w_alpha: store.add(name("interact.w_alpha"), uniform(&mut rng, &[2 * n, n], 2 * n)),
                conv_w: store.add(name("conv.weight"), uniform(&mut rng, &[s, d, d], s * d)),
                conv_b: store.add(name("conv.bias"), Tensor::zeros(&[d])),
                u: store.add(name("denoise.u"), uniform(&mut rng, &[d, d], d)),
                v: store.add(name("denoise.v"), uniform(&mut rng, &[d, d], d)),
                w: store.add(name("denoise.w"), uniform(&mut rng, &[d, d], d)),
                w_beta: store.add(name("denoise.w_beta"), uniform(&mut rng, &[2 * d, d], 2 * d)),
                agg_w: store.add(name("aggregate.weight"), uniform(&mut rng, &[p * d, d], p * d)),
                agg_b: store.add(name("aggregate.bias"), Tensor::zeros(&[d])),
            };
            if !lc.enable_interact {
                for id in [ids.w_v, ids.w_alpha] {
                    store.get_mut(id).tensor.set_requires_grad(false);
                }
            }
            if !lc.enable_denoise {
                for id in [ids.u, ids.v, ids.w, ids.w_beta] {
                    store.get_mut(id).tensor.set_requires_grad(false);
                }
            }
            levels.push(ids);
            memories.push(PatternMemory::new(lc.memory_capacity.max(1), d)?);
        }
        let head = HeadIds {
            w1: store.add("head.w1", uniform(&mut rng, &[d, d], d)),
            b1: store.add("head.b1", Tensor::zeros(&[d])),
            w2: store.add("head.w2", uniform(&mut rng, &[d, h], d)),
            b2: store.add("head.b2", Tensor::zeros(&[h])),
        };
        Ok(Self {
            config,
            store,
            embed,
            levels,
            head,
            memories,
        })
    }

    pub fn config(&self) -> &HmNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn memories(&self) -> &[PatternMemory] {
        &self.memories
    }

    pub fn memories_mut(&mut self) -> &mut [PatternMemory] {
        &mut self.memories
    }

    pub fn clear_memories(&mut self) {
        self.memories.iter_mut().for_each(PatternMemory::clear);
    }

    /// Parameter id of the interaction matrix at `level`.
    pub fn interaction_matrix(&self, level: usize) -> ParamId {
        self.levels[level].w_v
    }

    /// Parameter ids of the interaction module at `level`.
    pub fn interaction_params(&self, level: usize) -> [ParamId; 2] {
        [self.levels[level].w_v, self.levels[level].w_alpha]
    }

    /// Largest |W_v[i, i]| over all levels.
    pub fn max_diagonal(&self) -> f64 {
        self.levels
            .iter()
            .map(|l| {
                let t = self.store.tensor(l.w_v);
                let n = t.shape()[0];
                (0..n).map(|i| t.data()[i * n + i].abs()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    fn check_inputs(&self, x: &Tensor, time_feats: &Tensor) -> Result<usize> {
        let c = &self.config;
        let &[b, t, n] = x.shape() else {
            return Err(Error::shape(format!("input must be [B, T, N], got {:?}", x.shape())));
        };
        if t != c.input_length || n != c.num_variables {
            return Err(Error::shape(format!(
                "input {:?} does not match T = {}, N = {}",
                x.shape(),
                c.input_length,
                c.num_variables
            )));
        }
        if c.time_feature_dim > 0 && time_feats.shape() != [b, t, c.time_feature_dim] {
            return Err(Error::shape(format!(
                "time features {:?}, expected [{b}, {t}, {}]",
                time_feats.shape(),
                c.time_feature_dim
            )));
        }
        Ok(b)
    }

    /// Records a full forward pass on `g`. `x: [B, T, N]`,
    /// `time_feats: [B, T, F]`. Memory is only read; in training mode the
    /// cells to insert are returned in [`ForwardOutput::pending`] and must be
    /// committed with [`HmNet::commit`].
    pub fn forward(
        &self,
        g: &mut Graph,
        x: &Tensor,
        time_feats: &Tensor,
        mode: Mode,
    ) -> Result<ForwardOutput> {
        self.check_inputs(x, time_feats)?;
        let act = self.config.activation;
        let (x_norm, stats) = instance_normalize(x)?;
        let xv = g.input(x_norm);
        let (tf, tw) = match self.embed.time_w {
            Some(id) => (Some(g.input(time_feats.clone())), Some(g.param(&self.store, id))),
            None => (None, None),
        };
        let vw = g.param(&self.store, self.embed.value_w);
        let eb = g.param(&self.store, self.embed.bias);
        let mut h = layers::embed_variables(g, xv, tf, vw, tw, eb)?;

        let mut traces = Vec::with_capacity(self.levels.len());
        let mut pending = Vec::with_capacity(self.levels.len());
        for ((lc, ids), mem) in self.config.levels.iter().zip(&self.levels).zip(&self.memories) {
            let p = |g: &mut Graph, id| g.param(&self.store, id);
            let (h_v, alpha) = if lc.enable_interact {
                let (wv, wa) = (p(g, ids.w_v), p(g, ids.w_alpha));
                let (hv, a) = layers::dynamic_variable_interaction(g, h, wv, wa)?;
                (hv, Some(a))
            } else {
                (h, None)
            };
            let (cw, cb) = (p(g, ids.conv_w), p(g, ids.conv_b));
            let h_c = layers::convolution_unit(g, h_v, cw, cb, act)?;
            let (h_d, denoise) = if lc.enable_denoise {
                let weights = DenoiseWeights {
                    u: p(g, ids.u),
                    v: p(g, ids.v),
                    w: p(g, ids.w),
                    w_beta: p(g, ids.w_beta),
                };
                let mut trace = layers::adaptive_denoise(g, h_c, mem, lc.top_k, weights)?;
                pending.push(match mode {
                    Mode::Train => std::mem::take(&mut trace.queries),
                    Mode::Eval => Vec::new(),
                });
                (trace.output, Some(trace))
            } else {
                pending.push(Vec::new());
                (h_c, None)
            };
            let (aw, ab) = (p(g, ids.agg_w), p(g, ids.agg_b));
            let f = layers::level_aggregate(g, h_d, aw, ab)?;
            traces.push(LevelTrace {
                alpha,
                conv: h_c,
                output: h_d,
                aggregate: f,
                denoise,
            });
            h = h_d;
        }

        let head = HeadWeights {
            w1: g.param(&self.store, self.head.w1),
            b1: g.param(&self.store, self.head.b1),
            w2: g.param(&self.store, self.head.w2),
            b2: g.param(&self.store, self.head.b2),
        };
        let fs: Vec<Var> = traces.iter().map(|t| t.aggregate).collect();
        let normalized = layers::predict(g, &fs, &head, act)?;
        let (scale, shift) = stats.broadcast(g.shape(normalized))?;
        let scale = g.input(scale);
        let shift = g.input(shift);
        let scaled = g.mul(normalized, scale)?;
        let prediction = g.add(scaled, shift)?;
        Ok(ForwardOutput {
            prediction,
            normalized,
            levels: traces,
            pending: PendingInserts(pending),
        })
    }

    /// Forward pass in eval mode returning the forecast tensor.
    pub fn predict(&self, x: &Tensor, time_feats: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, x, time_feats, Mode::Eval)?;
        Ok(g.value(out.prediction).clone())
    }

    /// Writes the cells recorded by a training-mode pass into each level's
    /// memory.
    pub fn commit(&mut self, pending: PendingInserts) -> Result<()> {
        for (mem, cells) in self.memories.iter_mut().zip(pending.0) {
            if !cells.is_empty() {
                mem.insert_batch(&cells)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config() -> HmNetConfig {
        let mut c = HmNetConfig::standard(2, 2).with_blocks(8, &[2, 2]);
        c.hidden_dim = 4;
        c.set_memory(32, 3);
        c
    }

    fn inputs(c: &HmNetConfig, batch: usize) -> (Tensor, Tensor) {
        let x = Tensor::from_fn(&[batch, c.input_length, c.num_variables], |i| {
            (i as f64 * 0.37).sin() + 0.1 * i as f64
        });
        let tf = Tensor::from_fn(&[batch, c.input_length, c.time_feature_dim], |i| {
            ((i % 7) as f64) / 7.0 - 0.5
        });
        (x, tf)
    }

    #[test]
    fn output_shape_for_all_horizons() {
        for h in [96, 192, 336, 720] {
            let mut c = HmNetConfig::standard(3, h);
            c.hidden_dim = 4;
            let m = HmNet::new(c.clone()).unwrap();
            let (x, tf) = inputs(&c, 2);
            let y = m.predict(&x, &tf).unwrap();
            assert_eq!(y.shape(), &[2, h, 3]);
        }
    }

    #[test]
    fn level_positions_16_4_1() {
        let mut c = HmNetConfig::standard(2, 4);
        c.hidden_dim = 3;
        let m = HmNet::new(c.clone()).unwrap();
        let (x, tf) = inputs(&c, 1);
        let mut g = Graph::new();
        let out = m.forward(&mut g, &x, &tf, Mode::Eval).unwrap();
        let ps: Vec<usize> = out.levels.iter().map(|l| g.shape(l.output)[1]).collect();
        assert_eq!(ps, vec![16, 4, 1]);
    }

    #[test]
    fn eval_is_deterministic_and_read_only() {
        let c = toy_config();
        let mut m = HmNet::new(c.clone()).unwrap();
        let (x, tf) = inputs(&c, 3);
        let mut g = Graph::new();
        let out = m.forward(&mut g, &x, &tf, Mode::Train).unwrap();
        m.commit(out.pending).unwrap();
        let before = m.memories().to_vec();
        let a = m.predict(&x, &tf).unwrap();
        let b = m.predict(&x, &tf).unwrap();
        assert_eq!(a, b);
        assert_eq!(m.memories(), before.as_slice());
    }

    #[test]
    fn constant_input_gives_finite_forecast() {
        let c = toy_config();
        let m = HmNet::new(c.clone()).unwrap();
        let x = Tensor::full(&[2, 8, 2], 3.0);
        let (_, tf) = inputs(&c, 2);
        let y = m.predict(&x, &tf).unwrap();
        assert!(y.is_finite());
    }

    #[test]
    fn train_mode_fills_memory() {
        let c = toy_config();
        let mut m = HmNet::new(c.clone()).unwrap();
        let (x, tf) = inputs(&c, 2);
        let mut g = Graph::new();
        let out = m.forward(&mut g, &x, &tf, Mode::Train).unwrap();
        // level 0: 2 samples * 4 positions * 2 vars; level 1: 2 * 2 * 2.
        let lens: Vec<usize> = out.pending.0.iter().map(|p| p.len() / 4).collect();
        assert_eq!(lens, vec![16, 8]);
        m.commit(out.pending).unwrap();
        assert_eq!(m.memories()[0].count(), 16);
        assert_eq!(m.memories()[1].count(), 8);
    }

    #[test]
    fn diagonal_is_zero_after_init() {
        let m = HmNet::new(toy_config()).unwrap();
        assert_eq!(m.max_diagonal(), 0.0);
    }

    #[test]
    fn wrong_input_shape_rejected() {
        let c = toy_config();
        let m = HmNet::new(c).unwrap();
        let x = Tensor::zeros(&[1, 9, 2]);
        let tf = Tensor::zeros(&[1, 9, 5]);
        assert!(m.predict(&x, &tf).is_err());
    }
}
