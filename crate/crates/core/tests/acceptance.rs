//! Exit criteria. Prints one `PASS [n]` or `FAIL [n]` line per criterion and
//! exits nonzero when any criterion fails.
//!
//! Real benchmark files are looked up in `$HMNET_DATA_DIR` (default
//! `<workspace>/data`).

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use hmnet::autograd::Graph;
use hmnet::data::{sinusoids, NoiseSpec, Registry, Split, SplitRatios, WindowDataset};
use hmnet::gradcheck::check_param_grads;
use hmnet::memory::PatternMemory;
use hmnet::model::{HmNet, HmNetConfig, Mode};
use hmnet::optim::{Adam, AdamConfig};
use hmnet::train::experiments::{run_variant, MemorySetting, RunOutcome};
use hmnet::train::{evaluate, train, Ablation, TrainConfig};
use hmnet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_STEP: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const GRAD_SECS: f64 = 60.0;
const RETRIEVAL_CASES: usize = 1000;
const RETRIEVAL_SECS: f64 = 10.0;
const TRAIN_STEPS: usize = 100;
const KAPPA_TOL: f64 = 1e-9;
const LEARN_EPOCHS: usize = 200;
const LEARN_FRACTION: f64 = 0.1;
const LEARN_SECS: f64 = 600.0;
const LOSS_DROP: f64 = 10.0;
const ETTM2_MSE: f64 = 0.21;
const ETTM2_MAE: f64 = 0.29;
const EXCHANGE_MSE: f64 = 0.11;
const SWEEP_SEEDS: [u64; 3] = [0, 1, 2];
const SWEEP_EPOCHS: usize = 10;
const NOISE_P: f64 = 0.4;
const MEMORY_SLACK: f64 = 1.05;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

fn toy_sinusoid() -> WindowDataset {
    WindowDataset::build(&sinusoids(2000, 4, 0), SplitRatios::OTHER, 96, 24).unwrap()
}

fn small_sinusoid() -> WindowDataset {
    WindowDataset::build(&sinusoids(300, 3, 1), SplitRatios::OTHER, 16, 4).unwrap()
}

fn small_config(seed: u64) -> HmNetConfig {
    let mut c = HmNetConfig::standard(3, 4).with_blocks(16, &[4, 4]);
    c.hidden_dim = 8;
    c.set_memory(64, 4);
    c.seed = seed;
    c
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn gradient_check() -> Outcome {
    let started = Instant::now();
    let mut c = HmNetConfig::standard(2, 2).with_blocks(8, &[2, 2]);
    c.hidden_dim = 4;
    c.set_memory(64, 3);
    c.seed = 1;
    let mut m = HmNet::new(c).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let x = random_tensor(&[3, 8, 2], &mut rng);
    let tf = random_tensor(&[3, 8, 5], &mut rng);
    let y = random_tensor(&[3, 2, 2], &mut rng);
    for _ in 0..2 {
        let mut g = Graph::new();
        let out = m.forward(&mut g, &x, &tf, Mode::Train).unwrap();
        m.commit(out.pending).unwrap();
    }
    let rep = check_param_grads(
        m.params(),
        |g, store| {
            let mut probe = m.clone();
            *probe.params_mut() = store.clone();
            let out = probe.forward(g, &x, &tf, Mode::Eval)?;
            let t = g.input(y.clone());
            g.mse_loss(out.prediction, t)
        },
        GRAD_STEP,
    )
    .unwrap();
    let secs = started.elapsed().as_secs_f64();
    outcome(
        rep.passed(GRAD_TOL) && secs < GRAD_SECS,
        format!(
            "max rel error {:.2e} (< {GRAD_TOL:.0e}) over {} scalars in {secs:.1}s (< {GRAD_SECS}s)",
            rep.max_rel_error,
            rep.analytic.len()
        ),
    )
}

/// Every stored row ranked by inner product, best first, ties to the lower
/// slot.
fn exhaustive(mem: &PatternMemory, q: &[f64], k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = (0..mem.count())
        .map(|i| (mem.row(i).iter().zip(q).map(|(a, b)| a * b).sum(), i))
        .collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    all.truncate(k);
    all.into_iter().map(|(_, i)| i).collect()
}

fn random_pattern(rng: &mut ChaCha8Rng, dim: usize, discrete: bool) -> Vec<f64> {
    (0..dim)
        .map(|_| if discrete { rng.random_range(-2i32..=2) as f64 } else { rng.random_range(-1.0..1.0) })
        .collect()
}

fn retrieval_oracle() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut mismatches = 0;
    for case in 0..RETRIEVAL_CASES {
        // Alternate continuous values with small integers that force ties.
        let discrete = case % 2 == 1;
        let dim = rng.random_range(1..=16);
        let cap = rng.random_range(1..=256);
        let inserts = rng.random_range(0..=3 * cap);
        let k = rng.random_range(1..=32);
        let mut mem = PatternMemory::new(cap, dim).unwrap();
        for _ in 0..inserts {
            mem.insert(&random_pattern(&mut rng, dim, discrete)).unwrap();
        }
        let q = random_pattern(&mut rng, dim, discrete);
        if mem.top_k(&q, k).unwrap().indices != exhaustive(&mem, &q, k) {
            mismatches += 1;
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        mismatches == 0 && secs < RETRIEVAL_SECS,
        format!("{mismatches} mismatches in {RETRIEVAL_CASES} cases, {secs:.2}s (< {RETRIEVAL_SECS}s)"),
    )
}

fn fifo_and_norm() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(30);
    let mut failures = Vec::new();
    let mut zeros = 0usize;
    let cases: Vec<(usize, usize)> = (0..200)
        .map(|_| (rng.random_range(1..=64), rng.random_range(1..=8)))
        .chain([(4096, 16)])
        .collect();
    for (case, (cap, dim)) in cases.into_iter().enumerate() {
        let len = rng.random_range(0..=3 * cap);
        let mut mem = PatternMemory::new(cap, dim).unwrap();
        let mut kept: Vec<Vec<f64>> = Vec::new();
        for _ in 0..len {
            let v = if rng.random_bool(0.1) { vec![0.0; dim] } else { random_pattern(&mut rng, dim, false) };
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            let stored = mem.insert(&v).unwrap();
            if norm == 0.0 {
                zeros += 1;
                if stored {
                    failures.push(format!("case {case}: zero vector stored"));
                }
            } else {
                kept.push(v.iter().map(|x| x / norm).collect());
            }
        }
        let tail = &kept[kept.len().saturating_sub(cap)..];
        let rows = mem.rows_fifo();
        if rows.len() != tail.len() {
            failures.push(format!("case {case}: {} rows, expected {}", rows.len(), tail.len()));
            continue;
        }
        for (row, want) in rows.iter().zip(tail) {
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            let same = row.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12);
            if !same || (norm - 1.0).abs() > 1e-12 {
                failures.push(format!("case {case}: row mismatch"));
                break;
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!(
            "201 sequences up to 3M long, {zeros} zero inserts skipped, {} failures{}",
            failures.len(),
            failures.first().map(|f| format!(" (first: {f})")).unwrap_or_default()
        ),
    )
}

fn structural_invariants() -> Outcome {
    let ds = small_sinusoid();
    let mut m = HmNet::new(small_config(40)).unwrap();
    let mut adam = Adam::new(m.params(), AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let n_train = ds.len(Split::Train);
    let mut worst_diag: f64 = 0.0;
    for _ in 0..TRAIN_STEPS {
        let idx: Vec<usize> = (0..8).map(|_| rng.random_range(0..n_train)).collect();
        let b = ds.batch(Split::Train, &idx).unwrap();
        let mut g = Graph::new();
        let out = m.forward(&mut g, &b.x, &b.time_feats, Mode::Train).unwrap();
        let t = g.input(b.y);
        let loss = g.mse_loss(out.prediction, t).unwrap();
        g.backward(loss).unwrap();
        m.params_mut().zero_grads();
        g.accumulate_param_grads(m.params_mut()).unwrap();
        adam.step(m.params_mut()).unwrap();
        m.commit(out.pending).unwrap();
        worst_diag = worst_diag.max(m.max_diagonal());
    }

    let idx: Vec<usize> = (0..ds.len(Split::Test)).collect();
    let b = ds.batch(Split::Test, &idx).unwrap();
    let mut g = Graph::new();
    let out = m.forward(&mut g, &b.x, &b.time_feats, Mode::Eval).unwrap();
    let (mut gates, mut gates_inside, mut rows, mut kappa_err) = (0usize, 0usize, 0usize, 0.0f64);
    for level in &out.levels {
        let mut check_gate = |v| {
            for &a in g.value(v).data() {
                gates += 1;
                if a > 0.0 && a < 1.0 {
                    gates_inside += 1;
                }
            }
        };
        if let Some(a) = level.alpha {
            check_gate(a);
        }
        let trace = level.denoise.as_ref();
        if let Some(beta) = trace.and_then(|t| t.beta) {
            check_gate(beta);
        }
        if let Some(kappa) = trace.and_then(|t| t.kappa) {
            let k = *g.shape(kappa).last().unwrap();
            for row in g.value(kappa).data().chunks(k) {
                rows += 1;
                kappa_err = kappa_err.max((row.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    outcome(
        worst_diag == 0.0 && gates > 0 && gates_inside == gates && rows > 0 && kappa_err <= KAPPA_TOL,
        format!(
            "after {} steps: max |diag(W_v)| {worst_diag}, {gates_inside}/{gates} alpha/beta in (0,1), \
             {rows} kappa rows with max |sum - 1| {kappa_err:.1e} (<= {KAPPA_TOL:.0e})",
            adam.steps_taken()
        ),
    )
}

fn scramble_memories(m: &mut HmNet, rng: &mut ChaCha8Rng) {
    for mem in m.memories_mut() {
        let d = mem.dim();
        for _ in 0..mem.capacity() + 3 {
            mem.insert(&random_pattern(rng, d, false)).unwrap();
        }
    }
}

fn warm(m: &mut HmNet, ds: &WindowDataset) {
    let b = ds.batch(Split::Train, &(0..16).collect::<Vec<_>>()).unwrap();
    for _ in 0..2 {
        let mut g = Graph::new();
        let out = m.forward(&mut g, &b.x, &b.time_feats, Mode::Train).unwrap();
        m.commit(out.pending).unwrap();
    }
}

fn ablation_isolation() -> Outcome {
    let ds = small_sinusoid();
    let b = ds.batch(Split::Test, &(0..ds.len(Split::Test)).collect::<Vec<_>>()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(50);
    let (mut memory_diffs, mut weight_diffs) = (0usize, 0usize);
    for seed in 0..5 {
        let mut c = small_config(seed);
        Ablation::NoDenoise.apply(&mut c);
        let a = HmNet::new(c).unwrap();
        let mut scrambled = a.clone();
        scramble_memories(&mut scrambled, &mut rng);
        let (pa, ps) = (a.predict(&b.x, &b.time_feats).unwrap(), scrambled.predict(&b.x, &b.time_feats).unwrap());
        memory_diffs += pa.data().iter().zip(ps.data()).filter(|(x, y)| x.to_bits() != y.to_bits()).count();

        let mut c = small_config(seed);
        Ablation::NoInteract.apply(&mut c);
        let mut a = HmNet::new(c).unwrap();
        warm(&mut a, &ds);
        let mut scrambled = a.clone();
        for level in 0..2 {
            for id in scrambled.interaction_params(level) {
                for v in scrambled.params_mut().get_mut(id).tensor.data_mut() {
                    *v = rng.random_range(-5.0..5.0);
                }
            }
        }
        let (pa, ps) = (a.predict(&b.x, &b.time_feats).unwrap(), scrambled.predict(&b.x, &b.time_feats).unwrap());
        weight_diffs += pa.data().iter().zip(ps.data()).filter(|(x, y)| x.to_bits() != y.to_bits()).count();
    }
    outcome(
        memory_diffs == 0 && weight_diffs == 0,
        format!("5 seeds: {memory_diffs} output bits changed by memory, {weight_diffs} by W_v/W_alpha"),
    )
}

fn stop_gradient() -> Outcome {
    let ds = small_sinusoid();
    let mut m = HmNet::new(small_config(60)).unwrap();
    warm(&mut m, &ds);
    let b = ds.batch(Split::Test, &[0, 1, 2, 3]).unwrap();
    let mut g = Graph::new();
    let out = m.forward(&mut g, &b.x, &b.time_feats, Mode::Eval).unwrap();
    let t = g.input(b.y.clone());
    let loss = g.mse_loss(out.prediction, t).unwrap();
    g.backward(loss).unwrap();
    let mut nonzero = 0usize;
    let mut checked = 0usize;
    for level in &out.levels {
        if let Some(s) = level.denoise.as_ref().and_then(|t| t.patterns) {
            let grad = g.grad_or_zeros(s);
            checked += grad.len();
            nonzero += grad.iter().filter(|&&v| v != 0.0).count();
        }
    }
    // Nudge every stored pattern at every level by epsilon.
    let before = g.value(out.prediction).data().to_vec();
    let mut p = m.clone();
    for mem in p.memories_mut() {
        for i in 0..mem.count() {
            let row: Vec<f64> = mem.row(i).iter().map(|v| v + 1e-3).collect();
            mem.overwrite_row(i, &row).unwrap();
        }
    }
    let after = p.predict(&b.x, &b.time_feats).unwrap();
    let change = before.iter().zip(after.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(
        nonzero == 0 && checked > 0 && change > 0.0,
        format!("{nonzero}/{checked} nonzero pattern gradients, output change {change:.2e} under eps 1e-3"),
    )
}

fn learnability() -> Outcome {
    let started = Instant::now();
    let ds = toy_sinusoid();
    let cfg = TrainConfig { max_epochs: LEARN_EPOCHS, ..TrainConfig::default() };
    let run = run_variant(&ds, &HmNetConfig::standard(4, 24), &cfg, Ablation::Full, None, 0, "full".into()).unwrap();
    let secs = started.elapsed().as_secs_f64();
    let targets: Vec<f64> = (0..ds.len(Split::Test))
        .flat_map(|i| ds.window(Split::Test, i).target.to_vec())
        .collect();
    let mean = targets.iter().sum::<f64>() / targets.len() as f64;
    let var = targets.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / targets.len() as f64;
    let losses = &run.history.train_loss;
    let drop = losses[0] / losses.iter().cloned().fold(f64::INFINITY, f64::min);
    let mse = run.report.mse_standardized;
    outcome(
        mse < LEARN_FRACTION * var && secs < LEARN_SECS,
        format!(
            "test mse {mse:.5} < {LEARN_FRACTION} x variance {var:.4} after {} epochs in {secs:.0}s (< {LEARN_SECS}s); \
             train loss fell {drop:.1}x (target {LOSS_DROP}x)",
            run.history.epochs_run()
        ),
    )
}

fn data_dir() -> PathBuf {
    std::env::var_os("HMNET_DATA_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data")))
}

fn benchmark(registry: &Registry, name: &str) -> Result<hmnet::train::Metrics, String> {
    let entry = registry.get(name).map_err(|e| e.to_string())?;
    if !entry.path.exists() {
        return Err(format!("{} not found", entry.path.display()));
    }
    let series = entry.load(name).map_err(|e| e.to_string())?;
    let ds = WindowDataset::build(&series, entry.split, 96, 96).map_err(|e| e.to_string())?;
    let mut model = HmNet::new(HmNetConfig::standard(ds.num_vars, 96)).map_err(|e| e.to_string())?;
    let cfg = TrainConfig::default();
    train(&mut model, &ds, &cfg).map_err(|e| e.to_string())?;
    evaluate(&model, &ds, Split::Test, None, cfg.eval_batch_size).map_err(|e| e.to_string())
}

fn benchmark_reproduction() -> Outcome {
    let registry = Registry::benchmarks(&data_dir());
    let ett = benchmark(&registry, "ETTm2");
    let exchange = benchmark(&registry, "exchange_rate");
    let ett_ok = matches!(&ett, Ok(m) if m.mse_standardized <= ETTM2_MSE && m.mae_standardized <= ETTM2_MAE);
    let ex_ok = matches!(&exchange, Ok(m) if m.mse_standardized <= EXCHANGE_MSE);
    let show = |r: &Result<hmnet::train::Metrics, String>| match r {
        Ok(m) => format!("mse {:.4} mae {:.4}", m.mse_standardized, m.mae_standardized),
        Err(e) => format!("unavailable: {e}"),
    };
    outcome(
        ett_ok && ex_ok,
        format!(
            "ETTm2 H=96 {} (<= {ETTM2_MSE} / {ETTM2_MAE}); exchange H=96 {} (mse <= {EXCHANGE_MSE})",
            show(&ett),
            show(&exchange)
        ),
    )
}

/// Trained models shared by the noise and memory criteria.
struct SweepRuns {
    data: WindowDataset,
    full: Vec<RunOutcome>,
    no_denoise: Vec<RunOutcome>,
    small_memory: Vec<RunOutcome>,
}

fn sweep_runs() -> SweepRuns {
    let data = toy_sinusoid();
    let base = HmNetConfig::standard(4, 24);
    let cfg = TrainConfig { max_epochs: SWEEP_EPOCHS, ..TrainConfig::default() };
    let small = MemorySetting { capacity: 256, top_k: 1 };
    let (mut full, mut no_denoise, mut small_memory) = (vec![], vec![], vec![]);
    for seed in SWEEP_SEEDS {
        let run = |ablation, memory| run_variant(&data, &base, &cfg, ablation, memory, seed, String::new()).unwrap();
        full.push(run(Ablation::Full, None));
        no_denoise.push(run(Ablation::NoDenoise, None));
        small_memory.push(run(Ablation::Full, Some(small)));
    }
    SweepRuns { data, full, no_denoise, small_memory }
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn noise_robustness(runs: &SweepRuns) -> Outcome {
    let degradation = |outcomes: &[RunOutcome]| -> Vec<f64> {
        outcomes
            .iter()
            .zip(SWEEP_SEEDS)
            .map(|(o, seed)| {
                let spec = NoiseSpec::residual(NOISE_P, seed);
                let clean = evaluate(&o.model, &runs.data, Split::Test, None, 128).unwrap();
                let noisy = evaluate(&o.model, &runs.data, Split::Test, Some(&spec), 128).unwrap();
                noisy.mse_standardized - clean.mse_standardized
            })
            .collect()
    };
    let full = degradation(&runs.full);
    let plain = degradation(&runs.no_denoise);
    let (f, p) = (mean(&full), mean(&plain));
    outcome(
        f < p,
        format!("mean degradation at p={NOISE_P}: full {f:.5} vs no_denoise {p:.5} (per seed {full:.5?} vs {plain:.5?})"),
    )
}

fn memory_direction(runs: &SweepRuns) -> Outcome {
    let large = mean(&runs.full.iter().map(|o| o.report.mse_standardized).collect::<Vec<_>>());
    let small = mean(&runs.small_memory.iter().map(|o| o.report.mse_standardized).collect::<Vec<_>>());
    outcome(
        large <= small * MEMORY_SLACK,
        format!("mean test mse M=4096/K=16 {large:.5} <= {MEMORY_SLACK} x M=256/K=1 {small:.5}"),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("gradient correctness", gradient_check),
        ("retrieval oracle", retrieval_oracle),
        ("fifo and normalization", fifo_and_norm),
        ("structural invariants under training", structural_invariants),
        ("ablation isolation", ablation_isolation),
        ("stop-gradient", stop_gradient),
        ("learnability", learnability),
        ("benchmark reproduction", benchmark_reproduction),
    ];
    let mut results = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        results.push(report(i + 1, name, f()));
    }
    let runs = sweep_runs();
    results.push(report(9, "noise robustness", noise_robustness(&runs)));
    results.push(report(10, "memory sweep direction", memory_direction(&runs)));
    let failed = results.iter().filter(|&&p| !p).count();
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}

fn report(n: usize, name: &str, o: Outcome) -> bool {
    println!("{} [{n}] {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    o.passed
}
