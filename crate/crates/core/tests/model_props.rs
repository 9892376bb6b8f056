//! Behavioural contracts of the full network.

use hmnet::autograd::Graph;
use hmnet::model::{HmNet, HmNetConfig, Mode};
use hmnet::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(seed: u64) -> HmNetConfig {
    let mut c = HmNetConfig::standard(3, 4).with_blocks(16, &[4, 4]);
    c.hidden_dim = 6;
    c.set_memory(32, 4);
    c.seed = seed;
    c
}

fn inputs(seed: u64) -> (Tensor, Tensor) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor::from_fn(&[4, 16, 3], |i| (i as f64 * 0.3).sin() + rng.random_range(-0.2..0.2));
    let tf = Tensor::from_fn(&[4, 16, 5], |_| rng.random_range(-0.5..0.5));
    (x, tf)
}

fn warm(m: &mut HmNet, x: &Tensor, tf: &Tensor, passes: usize) {
    for _ in 0..passes {
        let mut g = Graph::new();
        let out = m.forward(&mut g, x, tf, Mode::Train).unwrap();
        m.commit(out.pending).unwrap();
    }
}

fn scramble_memories(m: &mut HmNet, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for mem in m.memories_mut() {
        let d = mem.dim();
        for _ in 0..mem.capacity() + 3 {
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
            mem.insert(&v).unwrap();
        }
    }
}

#[test]
fn denoise_off_ignores_memory_contents() {
    let mut c = config(1);
    c.set_switches(true, false);
    let (x, tf) = inputs(2);
    let a = HmNet::new(c).unwrap();
    let mut b = a.clone();
    scramble_memories(&mut b, 3);
    assert_eq!(a.predict(&x, &tf).unwrap().data(), b.predict(&x, &tf).unwrap().data());
}

#[test]
fn interact_off_ignores_interaction_weights() {
    let mut c = config(1);
    c.set_switches(false, true);
    let (x, tf) = inputs(2);
    let mut a = HmNet::new(c).unwrap();
    warm(&mut a, &x, &tf, 2);
    let mut b = a.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for l in 0..2 {
        for id in b.interaction_params(l) {
            let p = b.params_mut().get_mut(id);
            for v in p.tensor.data_mut() {
                *v = rng.random_range(-5.0..5.0);
            }
        }
    }
    assert_eq!(a.predict(&x, &tf).unwrap().data(), b.predict(&x, &tf).unwrap().data());
}

#[test]
fn stored_patterns_affect_output_but_get_no_gradient() {
    let (x, tf) = inputs(5);
    let mut m = HmNet::new(config(6)).unwrap();
    warm(&mut m, &x, &tf, 2);
    let y = Tensor::from_fn(&[4, 4, 3], |i| (i as f64 * 0.2).cos());

    let mut g = Graph::new();
    let out = m.forward(&mut g, &x, &tf, Mode::Eval).unwrap();
    let t = g.input(y.clone());
    let loss = g.mse_loss(out.prediction, t).unwrap();
    g.backward(loss).unwrap();
    for level in &out.levels {
        let trace = level.denoise.as_ref().expect("denoise on");
        let s = trace.patterns.expect("memory filled");
        assert!(g.grad_or_zeros(s).iter().all(|&v| v == 0.0));
    }
    // Shift every stored level-0 pattern by a small epsilon.
    let before = g.value(out.prediction).data().to_vec();
    let mut p = m.clone();
    let mem = &mut p.memories_mut()[0];
    for i in 0..mem.count() {
        let row: Vec<f64> = mem.row(i).iter().map(|v| v + 1e-3).collect();
        mem.overwrite_row(i, &row).unwrap();
    }
    let after = p.predict(&x, &tf).unwrap();
    assert_ne!(before, after.data());
}

#[test]
fn forward_is_bit_reproducible() {
    let (x, tf) = inputs(7);
    let mut a = HmNet::new(config(8)).unwrap();
    let mut b = HmNet::new(config(8)).unwrap();
    warm(&mut a, &x, &tf, 2);
    warm(&mut b, &x, &tf, 2);
    assert_eq!(a.memories(), b.memories());
    assert_eq!(a.predict(&x, &tf).unwrap().data(), b.predict(&x, &tf).unwrap().data());
    assert_eq!(a.predict(&x, &tf).unwrap().data(), a.predict(&x, &tf).unwrap().data());
}

#[test]
fn evaluation_leaves_memory_untouched() {
    let (x, tf) = inputs(9);
    let mut m = HmNet::new(config(10)).unwrap();
    warm(&mut m, &x, &tf, 1);
    let before = m.memories().to_vec();
    let mut g = Graph::new();
    let out = m.forward(&mut g, &x, &tf, Mode::Eval).unwrap();
    assert!(out.pending.0.iter().all(Vec::is_empty));
    assert_eq!(m.memories(), &before[..]);
}

#[cfg(feature = "parallel")]
#[test]
fn thread_count_does_not_change_results() {
    let mut c = HmNetConfig::standard(4, 24);
    c.seed = 11;
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = Tensor::from_fn(&[8, 96, 4], |_| rng.random_range(-1.0..1.0));
    let tf = Tensor::from_fn(&[8, 96, 5], |_| rng.random_range(-0.5..0.5));
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut m = HmNet::new(c.clone()).unwrap();
            warm(&mut m, &x, &tf, 2);
            let mut g = Graph::new();
            let out = m.forward(&mut g, &x, &tf, Mode::Train).unwrap();
            let loss = g.sum(out.prediction);
            g.backward(loss).unwrap();
            m.params_mut().zero_grads();
            g.accumulate_param_grads(m.params_mut()).unwrap();
            let grads: Vec<Vec<f64>> = m.params().iter().map(|p| p.tensor.grad().unwrap_or(&[]).to_vec()).collect();
            (g.value(out.prediction).data().to_vec(), grads)
        })
    };
    assert_eq!(run(1), run(4));
}
