#![allow(dead_code)]

use circleflow::grid::{Grid, PeriodicProfile};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `Σ_k a_k cos kx + b_k sin kx` for `k = 0..coeffs.len()`.
pub fn trig(grid: Grid, coeffs: &[(f64, f64)]) -> PeriodicProfile {
    let c = coeffs.to_vec();
    PeriodicProfile::from_fn(grid, move |x| {
        c.iter().enumerate().map(|(k, (a, b))| a * (k as f64 * x).cos() + b * (k as f64 * x).sin()).sum()
    })
}

pub fn trig_eval(coeffs: &[(f64, f64)], x: f64) -> f64 {
    coeffs.iter().enumerate().map(|(k, (a, b))| a * (k as f64 * x).cos() + b * (k as f64 * x).sin()).sum()
}

/// Smooth random profile: mean in [-0.5, 0.5) plus five decaying modes.
pub fn random_smooth(rng: &mut ChaCha8Rng, grid: Grid) -> PeriodicProfile {
    let mut c = vec![(rng.gen_range(-0.5..0.5), 0.0)];
    for k in 1..=5 {
        c.push((rng.gen_range(-1.0..1.0) / k as f64, rng.gen_range(-1.0..1.0) / k as f64));
    }
    trig(grid, &c)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
