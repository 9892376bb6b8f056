//! Quick end-to-end verification of the numerical core, run by the
//! `selfcheck` command.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autograd::{Contraction, Graph};
use crate::error::Result;
use crate::gradcheck::{check_param_grads, finite_diff_check};
use crate::memory::PatternMemory;
use crate::model::{instance_denormalize, instance_normalize, HmNet, HmNetConfig, Mode};
use crate::tensor::Tensor;

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Largest observed deviation for numeric checks.
    pub max_error: f64,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag}  {:<28} max_error={:<10.3e} {}", self.name, self.max_error, self.detail)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SelfcheckReport {
    pub checks: Vec<CheckResult>,
}

impl SelfcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Test hooks that deliberately break an invariant.
#[derive(Debug, Clone, Copy, Default)]
pub struct Faults {
    /// Writes a non-zero value onto the diagonal of a W_v, bypassing its mask.
    pub corrupt_diagonal: bool,
}

fn outcome(name: &str, result: Result<(bool, f64, String)>) -> CheckResult {
    match result {
        Ok((passed, max_error, detail)) => CheckResult { name: name.into(), passed, max_error, detail },
        Err(e) => CheckResult {
            name: name.into(),
            passed: false,
            max_error: f64::NAN,
            detail: format!("error: {e}"),
        },
    }
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn toy_config() -> HmNetConfig {
    let mut c = HmNetConfig::standard(2, 2).with_blocks(8, &[2, 2]);
    c.hidden_dim = 4;
    c.set_memory(64, 3);
    c.seed = 1;
    c
}

fn operator_gradients() -> Result<(bool, f64, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = random(&mut rng, &[4, 3]);
    let x = random(&mut rng, &[2, 5, 4]);
    let rep = finite_diff_check(
        |g, v| {
            let w = g.input(w.clone());
            let y = g.matmul(v, w, Contraction::Last)?;
            let y = g.gelu(y);
            let y = g.softmax(y, 1)?;
            let y = g.l2_normalize(y)?;
            let s = g.sigmoid(y);
            Ok(g.sum(s))
        },
        &x,
        GRAD_STEP,
    )?;
    Ok((rep.passed(GRAD_TOLERANCE), rep.max_rel_error, format!("{} inputs", rep.analytic.len())))
}

fn model_gradients() -> Result<(bool, f64, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut m = HmNet::new(toy_config())?;
    let x = random(&mut rng, &[3, 8, 2]);
    let tf = random(&mut rng, &[3, 8, 5]);
    let y = random(&mut rng, &[3, 2, 2]);
    for _ in 0..2 {
        let mut g = Graph::new();
        let out = m.forward(&mut g, &x, &tf, Mode::Train)?;
        m.commit(out.pending)?;
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
    )?;
    Ok((rep.passed(GRAD_TOLERANCE), rep.max_rel_error, format!("{} parameters", rep.analytic.len())))
}

/// Indices of the `k` best rows by score, ties to the lower slot.
fn exhaustive_top_k(mem: &PatternMemory, q: &[f64], k: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = (0..mem.count())
        .map(|i| (mem.row(i).iter().zip(q).map(|(a, b)| a * b).sum(), i))
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).expect("finite scores").then(a.1.cmp(&b.1)));
    scored.into_iter().take(k).map(|s| s.1).collect()
}

fn retrieval_oracle() -> Result<(bool, f64, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let cases = 200;
    let mut mismatches = 0;
    for _ in 0..cases {
        let dim = rng.random_range(1..6);
        let mut mem = PatternMemory::new(rng.random_range(1..40), dim)?;
        for _ in 0..rng.random_range(0..80) {
            // Coarse values make exact ties common.
            let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-2..=2) as f64).collect();
            mem.insert(&v)?;
        }
        let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-2..=2) as f64).collect();
        let k = rng.random_range(1..10);
        if mem.top_k(&q, k)?.indices != exhaustive_top_k(&mem, &q, k) {
            mismatches += 1;
        }
    }
    Ok((mismatches == 0, mismatches as f64, format!("{cases} cases, {mismatches} mismatches")))
}

fn fifo_properties() -> Result<(bool, f64, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (cap, dim) = (17, 3);
    let mut mem = PatternMemory::new(cap, dim)?;
    let mut inserted: Vec<Vec<f64>> = Vec::new();
    for i in 0..500 {
        let v: Vec<f64> = if i % 13 == 0 {
            vec![0.0; dim]
        } else {
            (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
        };
        if mem.insert(&v)? {
            inserted.push(v);
        }
    }
    let expected = &inserted[inserted.len() - cap..];
    let mut worst: f64 = 0.0;
    for (row, raw) in mem.rows_fifo().into_iter().zip(expected) {
        let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (a, b) in row.iter().zip(raw) {
            worst = worst.max((a - b / norm).abs());
        }
        let unit = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        worst = worst.max((unit - 1.0).abs());
    }
    let skipped = 500 - inserted.len();
    Ok((worst < 1e-12 && mem.count() == cap, worst, format!("{skipped} zero inserts skipped")))
}

fn shape_contracts() -> Result<(bool, f64, String)> {
    let mut ok = true;
    for h in [96, 192, 336, 720] {
        let mut c = HmNetConfig::standard(3, h);
        c.hidden_dim = 4;
        c.set_memory(32, 2);
        ok &= c.positions() == [16, 4, 1];
        let m = HmNet::new(c)?;
        let x = Tensor::from_fn(&[1, 96, 3], |i| (i as f64 * 0.1).sin());
        let tf = Tensor::zeros(&[1, 96, 5]);
        ok &= m.predict(&x, &tf)?.shape() == [1, h, 3];
    }
    ok &= HmNetConfig::standard(3, 96).with_blocks(96, &[6, 4, 5]).validate().is_err();
    let x = Tensor::from_fn(&[2, 12, 3], |i| (i as f64).cos() * 3.0 + 1.0);
    let (z, stats) = instance_normalize(&x)?;
    let err = instance_denormalize(&z, &stats)?.max_abs_diff(&x);
    ok &= err < 1e-9;
    Ok((ok, err, "horizons 96/192/336/720, bad blocks rejected, norm round trip".into()))
}

fn diagonal_mask(faults: Faults) -> Result<(bool, f64, String)> {
    let mut m = HmNet::new(toy_config())?;
    if faults.corrupt_diagonal {
        let id = m.interaction_matrix(0);
        m.params_mut().get_mut(id).tensor.data_mut()[0] = 0.5;
    }
    let diag = m.max_diagonal();
    let x = Tensor::from_fn(&[1, 8, 2], |i| i as f64);
    let tf = Tensor::zeros(&[1, 8, 5]);
    let detail = match m.predict(&x, &tf) {
        Ok(_) => "diag(W_v) == 0 at every level".to_string(),
        Err(e) => e.to_string(),
    };
    Ok((diag == 0.0, diag, detail))
}

pub fn run(faults: Faults) -> SelfcheckReport {
    let checks = vec![
        outcome("operator gradients", operator_gradients()),
        outcome("model gradients", model_gradients()),
        outcome("retrieval oracle", retrieval_oracle()),
        outcome("fifo and unit norm", fifo_properties()),
        outcome("shape contracts", shape_contracts()),
        outcome("diag(W_v) == 0", diagonal_mask(faults)),
    ];
    SelfcheckReport { checks }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_build_passes() {
        let rep = run(Faults::default());
        for c in &rep.checks {
            assert!(c.passed, "{c}");
        }
    }

    #[test]
    fn corrupted_mask_is_named() {
        let rep = run(Faults { corrupt_diagonal: true });
        assert!(!rep.passed());
        let failed: Vec<&CheckResult> = rep.checks.iter().filter(|c| !c.passed).collect();
        assert_eq!(failed.len(), 1);
        assert!(failed[0].name.contains("diag(W_v)"));
        assert!(failed[0].detail.contains("diag(W_v) must be zero"), "{}", failed[0].detail);
    }
}
