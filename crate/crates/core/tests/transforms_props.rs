use std::f64::consts::TAU;

use circleflow::forcing::{presets, HullPoint};
use circleflow::grid::{Grid, PeriodicProfile};
use circleflow::quad::adaptive_simpson;
use circleflow::solver::{evolve, SolverConfig};
use circleflow::transforms::{gauge, homogeneous_modes, mean_drift, AnalyticField};
use proptest::prelude::*;

fn grid() -> Grid {
    Grid::new(64).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn psi_matches_quadrature(c0 in -2.0..2.0f64, c1 in -1.0..1.0f64, s2 in -1.0..1.0f64, t in 0.0..5.0f64) {
        let a = move |t: f64, x: f64| c0 + c1 * (x + t).cos() + s2 * (2.0 * x).sin() * t.cos();
        let f = AnalyticField::new(grid(), a, |_, _| 0.0);
        let s = gauge(&f, t, 1e-4);
        let a0 = mean_drift(&f, t);
        prop_assert!((a0 - c0).abs() < 1e-13);
        for (j, x) in grid().nodes().into_iter().enumerate() {
            let big_a = adaptive_simpson(|z| a(t, z) - a0, 0.0, x, 1e-13);
            prop_assert!((s.psi.values()[j] - (0.5 * big_a).exp()).abs() < 1e-10);
        }
        // ψ closes up: A(2π) = 0
        let (end, _) = s.psi.eval_at(TAU);
        prop_assert!((end - 1.0).abs() < 1e-10);
    }

    #[test]
    fn constant_drift_is_a_pure_shift(a0 in -3.0..3.0f64, b1 in -1.0..1.0f64, t in 0.0..5.0f64) {
        let b = move |t: f64, x: f64| b1 * (x - t).sin() + 0.2;
        let f = AnalyticField::new(grid(), move |_, _| a0, b);
        let s = gauge(&f, t, 1e-4);
        prop_assert!(s.psi.values().iter().all(|&p| p == 1.0));
        for (j, x) in grid().nodes().into_iter().enumerate() {
            prop_assert!((s.b_tilde.values()[j] - b(t, x)).abs() < 1e-13);
        }
    }
}

#[test]
fn homogeneous_modes_match_integration() {
    let b0 = 0.3;
    let g0 = HullPoint::origin(presets::floquet_linear(b0));
    let cfg = SolverConfig { dt: 1e-3, save_stride: 100, ..SolverConfig::default() };
    for k in 1..=3u32 {
        let v0 = PeriodicProfile::from_fn(grid(), |x| (k as f64 * x).sin());
        let traj = evolve(&v0, &g0, 5.0, &cfg).unwrap();
        for s in traj.samples() {
            let want = homogeneous_modes(|t| b0 * t.cos(), k, s.t);
            // project on mode k: round-off in slower modes would dominate a norm
            let got = 2.0 * s.u.coeffs()[k as usize].norm();
            assert!((got / want - 1.0).abs() < 0.01, "k = {k}, t = {}: {got:e} vs {want:e}", s.t);
        }
    }
}
