//! Analytic gradients against central finite differences, operator by
//! operator and through the whole network.

use hmnet::autograd::{Contraction, Graph, Var};
use hmnet::gradcheck::{check_param_grads, finite_diff_check};
use hmnet::model::{HmNet, HmNetConfig, Mode};
use hmnet::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// Reduces any tensor to a scalar with non-uniform weights so that every
/// output element contributes a distinct gradient.
fn weighted_sum(g: &mut Graph, v: Var) -> Result<Var> {
    let shape = g.shape(v).to_vec();
    let w = g.input(Tensor::from_fn(&shape, |i| ((i * 7 % 13) as f64 - 6.0) / 5.0));
    let p = g.mul(v, w)?;
    Ok(g.sum(p))
}

fn check(name: &str, x: Tensor, f: impl Fn(&mut Graph, Var) -> Result<Var>) {
    let rep = finite_diff_check(|g, v| { let y = f(g, v)?; weighted_sum(g, y) }, &x, STEP).unwrap();
    assert!(
        rep.passed(TOL),
        "{name}: max rel error {} at {} (analytic {}, numeric {})",
        rep.max_rel_error,
        rep.worst_index,
        rep.analytic[rep.worst_index],
        rep.numeric[rep.worst_index]
    );
}

#[test]
fn elementwise_ops() {
    let other = random(&[3, 4], 9);
    check("add", random(&[3, 4], 1), |g, v| { let o = g.input(other.clone()); g.add(v, o) });
    check("sub", random(&[3, 4], 2), |g, v| { let o = g.input(other.clone()); g.sub(o, v) });
    check("mul", random(&[3, 4], 3), |g, v| { let o = g.input(other.clone()); g.mul(v, o) });
    check("square", random(&[3, 4], 4), |g, v| g.mul(v, v));
    check("scale", random(&[3, 4], 5), |g, v| Ok(g.scale(v, -2.5)));
    check("sigmoid", random(&[3, 4], 6), |g, v| Ok(g.sigmoid(v)));
    check("gelu", random(&[3, 4], 7), |g, v| Ok(g.gelu(v)));
}

#[test]
fn broadcast_ops() {
    let x = random(&[2, 3, 4], 11);
    check("add_bias/x", x.clone(), |g, v| { let b = g.input(random(&[4], 12)); g.add_bias(v, b) });
    check("add_bias/b", random(&[3, 4], 13), |g, b| { let x = g.input(x.clone()); g.add_bias(x, b) });
    check("add_expand/b", random(&[2, 4], 14), |g, b| { let x = g.input(x.clone()); g.add_expand(x, b, 1) });
    check("add_expand/x", x.clone(), |g, v| { let b = g.input(random(&[2, 3], 15)); g.add_expand(v, b, 2) });
}

#[test]
fn matmul_variants() {
    let w = random(&[4, 5], 21);
    check("linear/x", random(&[3, 4], 22), |g, v| { let w = g.input(w.clone()); g.matmul(v, w, Contraction::Last) });
    let x = random(&[3, 4], 23);
    check("linear/w", w.clone(), |g, wv| { let x = g.input(x.clone()); g.matmul(x, wv, Contraction::Last) });
    let h = random(&[2, 3, 4, 2], 24);
    check("axis/x", h.clone(), |g, v| { let w = g.input(w.clone()); g.matmul(v, w, Contraction::Axis(2)) });
    check("axis/w", w.clone(), |g, wv| { let h = g.input(h.clone()); g.matmul(h, wv, Contraction::Axis(2)) });
    for transpose_rhs in [false, true] {
        let spec = Contraction::Batched { transpose_rhs };
        let b = if transpose_rhs { random(&[3, 5, 4], 25) } else { random(&[3, 4, 5], 25) };
        let a = random(&[3, 2, 4], 26);
        check("batched/a", a.clone(), |g, v| { let b = g.input(b.clone()); g.matmul(v, b, spec) });
        check("batched/b", b.clone(), |g, v| { let a = g.input(a.clone()); g.matmul(a, v, spec) });
    }
}

#[test]
fn structural_ops() {
    let other = random(&[2, 2, 3], 31);
    check("concat/a", random(&[2, 4, 3], 32), |g, v| { let o = g.input(other.clone()); g.concat(v, o, 1) });
    check("concat/b", other.clone(), |g, v| { let o = g.input(random(&[2, 4, 3], 33)); g.concat(o, v, 1) });
    check("reshape", random(&[2, 6], 34), |g, v| g.reshape(v, &[3, 4]));
    check("permute", random(&[2, 3, 4], 35), |g, v| g.permute(v, &[2, 0, 1]));
    check("softmax/0", random(&[3, 4], 36), |g, v| g.softmax(v, 0));
    check("softmax/1", random(&[2, 3, 4], 37), |g, v| g.softmax(v, 1));
    check("l2_normalize", random(&[4, 3], 38), |g, v| g.l2_normalize(v));
}

#[test]
fn fused_ops() {
    let (a, b) = (random(&[3, 4], 41), random(&[3, 4], 42));
    check("gate/g", random(&[3, 4], 43), |g, v| { let (x, y) = (g.input(a.clone()), g.input(b.clone())); g.gate(v, x, y) });
    let gate = Tensor::from_fn(&[3, 4], |i| 0.1 + 0.07 * i as f64);
    check("gate/a", a.clone(), |g, v| { let (s, y) = (g.input(gate.clone()), g.input(b.clone())); g.gate(s, v, y) });
    check("gate/b", b.clone(), |g, v| { let (s, x) = (g.input(gate.clone()), g.input(a.clone())); g.gate(s, x, v) });

    let x = random(&[2, 8, 3, 2], 44);
    let w = random(&[4, 2, 3], 45);
    let bias = random(&[3], 46);
    check("conv/x", x.clone(), |g, v| { let (w, b) = (g.input(w.clone()), g.input(bias.clone())); g.blocked_conv1d(v, w, b) });
    check("conv/w", w.clone(), |g, v| { let (x, b) = (g.input(x.clone()), g.input(bias.clone())); g.blocked_conv1d(x, v, b) });
    check("conv/b", bias.clone(), |g, v| { let (x, w) = (g.input(x.clone()), g.input(w.clone())); g.blocked_conv1d(x, w, v) });

    let vals = random(&[2, 5, 3], 47);
    let ew = random(&[3, 4], 48);
    check("embed/x", vals.clone(), |g, v| { let w = g.input(ew.clone()); g.embed_values(v, w) });
    check("embed/w", ew.clone(), |g, v| { let x = g.input(vals.clone()); g.embed_values(x, v) });

    let target = random(&[3, 4], 49);
    let rep = finite_diff_check(|g, v| { let t = g.input(target.clone()); g.mse_loss(v, t) }, &random(&[3, 4], 50), STEP).unwrap();
    assert!(rep.passed(TOL), "mse: {}", rep.max_rel_error);
}

fn toy_config(seed: u64) -> HmNetConfig {
    let mut c = HmNetConfig::standard(2, 2).with_blocks(8, &[2, 2]);
    c.hidden_dim = 4;
    c.set_memory(64, 3);
    c.seed = seed;
    c
}

/// Memory pre-filled by a couple of training-mode passes so the denoising
/// branch is active.
fn warmed_model(seed: u64) -> (HmNet, Tensor, Tensor, Tensor) {
    let c = toy_config(seed);
    let mut m = HmNet::new(c.clone()).unwrap();
    let x = random(&[3, 8, 2], seed + 100);
    let tf = random(&[3, 8, 5], seed + 101);
    let y = random(&[3, 2, 2], seed + 102);
    for _ in 0..2 {
        let mut g = Graph::new();
        let out = m.forward(&mut g, &x, &tf, Mode::Train).unwrap();
        m.commit(out.pending).unwrap();
    }
    (m, x, tf, y)
}

#[test]
fn full_model_matches_finite_differences() {
    for seed in [1, 2] {
        let (m, x, tf, y) = warmed_model(seed);
        assert!(m.memories()[0].count() > 3);
        let rep = check_param_grads(
            m.params(),
            |g, store| {
                let mut probe = m.clone();
                *probe.params_mut() = store.clone();
                let out = probe.forward(g, &x, &tf, Mode::Eval)?;
                let t = g.input(y.clone());
                g.mse_loss(out.prediction, t)
            },
            STEP,
        )
        .unwrap();
        assert!(rep.passed(TOL), "seed {seed}: max rel error {}", rep.max_rel_error);
        assert!(rep.analytic.len() > 300);
    }
}
