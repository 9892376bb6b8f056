//! Parallel against sequential execution of the hot paths.
//!
//! With the `parallel` feature each benchmark runs inside a one-thread rayon
//! pool and inside a pool with every available core. Building with
//! `--no-default-features` measures the plain sequential loops instead.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use hmnet::kernels::{batched_matmul, block_conv, contract_axis, AxisLayout, BatchLayout, ConvLayout};
use hmnet::{Graph, HmNet, HmNetConfig, Mode, PatternMemory, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
}

#[cfg(feature = "parallel")]
fn backends() -> Vec<(String, rayon::ThreadPool)> {
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut counts = vec![1];
    if cores > 1 {
        counts.push(cores);
    }
    counts
        .into_iter()
        .map(|t| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(t).build().unwrap();
            (format!("threads_{t}"), pool)
        })
        .collect()
}

/// Benchmarks `f` once per backend under `group/name`.
fn on_backends(c: &mut Criterion, group: &str, name: &str, f: impl Fn() + Sync) {
    let mut g = c.benchmark_group(group);
    #[cfg(feature = "parallel")]
    for (label, pool) in backends() {
        g.bench_function(BenchmarkId::new(name, label), |b| pool.install(|| b.iter(&f)));
    }
    #[cfg(not(feature = "parallel"))]
    g.bench_function(BenchmarkId::new(name, "sequential"), |b| b.iter(&f));
    g.finish();
}

fn kernels(c: &mut Criterion) {
    // Interaction-sized: [B*T, N, d] against [N, N].
    let axis = AxisLayout { pre: 32 * 96, m: 7, post: 16, j: 7 };
    let x = random(axis.pre * axis.m * axis.post, 1);
    let w = random(axis.m * axis.j, 2);
    on_backends(c, "kernels", "contract_axis", || {
        black_box(contract_axis(black_box(&x), &w, axis));
    });

    let conv = ConvLayout { pre: 32, t: 96, vars: 7, d_in: 16, d_out: 16, block: 6 };
    let cx = random(conv.pre * conv.t * conv.vars * conv.d_in, 3);
    let cw = random(conv.block * conv.d_in * conv.d_out, 4);
    let cb = random(conv.d_out, 5);
    on_backends(c, "kernels", "block_conv", || {
        black_box(block_conv(black_box(&cx), &cw, &cb, conv));
    });

    // Retrieval scoring: one query row against K patterns per cell.
    let bm = BatchLayout { g: 32 * 16 * 7, m: 1, k: 16, n: 16, transpose_rhs: true };
    let a = random(bm.g * bm.m * bm.k, 6);
    let b = random(bm.g * bm.n * bm.k, 7);
    on_backends(c, "kernels", "batched_matmul", || {
        black_box(batched_matmul(black_box(&a), &b, bm));
    });
}

fn retrieval(c: &mut Criterion) {
    let (capacity, dim) = (4096, 16);
    let mut mem = PatternMemory::new(capacity, dim).unwrap();
    mem.insert_batch(&random(capacity * dim, 8)).unwrap();
    let queries = random(512 * dim, 9);
    on_backends(c, "retrieval", "top_k_batch_512x4096", || {
        black_box(mem.top_k_batch(black_box(&queries), 16).unwrap());
    });
}

fn forward(c: &mut Criterion) {
    let mut config = HmNetConfig::standard(7, 96);
    config.seed = 3;
    let mut model = HmNet::new(config).unwrap();
    let x = Tensor::new(vec![32, 96, 7], random(32 * 96 * 7, 10)).unwrap();
    let tf = Tensor::new(vec![32, 96, 5], random(32 * 96 * 5, 11)).unwrap();
    for _ in 0..8 {
        let mut g = Graph::new();
        let out = model.forward(&mut g, &x, &tf, Mode::Train).unwrap();
        model.commit(out.pending).unwrap();
    }
    on_backends(c, "model", "forward_backward_b32", || {
        let mut g = Graph::new();
        let out = model.forward(&mut g, &x, &tf, Mode::Eval).unwrap();
        let loss = g.sum(out.prediction);
        g.backward(loss).unwrap();
        black_box(g.value(loss).item().unwrap());
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = kernels, retrieval, forward
}
criterion_main!(benches);
