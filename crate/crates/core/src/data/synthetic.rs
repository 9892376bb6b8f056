use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::series::{Frequency, TimeSeriesDataset};

const PERIODS: [f64; 4] = [24.0, 12.0, 48.0, 32.0];
const OBSERVATION_NOISE: f64 = 0.05;

/// Hourly multivariate sinusoids: variable `n` mixes a fundamental with a
/// weaker harmonic, seeded phases, and small Gaussian observation noise.
pub fn sinusoids(steps: usize, vars: usize, seed: u64) -> TimeSeriesDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let phase = Normal::new(0.0, 1.0).expect("unit normal");
    let noise = Normal::new(0.0, OBSERVATION_NOISE).expect("valid std");
    let params: Vec<(f64, f64, f64, f64)> = (0..vars)
        .map(|n| {
            let period = PERIODS[n % PERIODS.len()] * (1.0 + (n / PERIODS.len()) as f64 * 0.5);
            (period, 1.0 + 0.25 * n as f64, phase.sample(&mut rng), phase.sample(&mut rng))
        })
        .collect();
    let mut values = Vec::with_capacity(steps * vars);
    for t in 0..steps {
        for &(period, amp, p1, p2) in &params {
            let w = std::f64::consts::TAU * t as f64 / period;
            values.push(amp * (w + p1).sin() + 0.3 * amp * (2.0 * w + p2).sin() + noise.sample(&mut rng));
        }
    }
    let t0 = NaiveDate::from_ymd_opt(2021, 1, 1)
        .and_then(|d| d.and_hms_opt(0, 0, 0))
        .expect("valid start");
    TimeSeriesDataset {
        name: "sinusoid".into(),
        values,
        timestamps: (0..steps).map(|i| t0 + Frequency::HOURLY.delta() * i as i32).collect(),
        variable_names: (0..vars).map(|n| format!("s{n}")).collect(),
        frequency: Frequency::HOURLY,
    }
}
