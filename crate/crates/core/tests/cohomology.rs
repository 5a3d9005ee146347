mod common;

use proptest::prelude::*;
use tori_core::cohomology::{
    resonant_wavenumbers, solve_multiple_non_small_divisor, solve_multiple_small_divisor, solve_small_divisor,
    DEFAULT_DIVISOR_FLOOR,
};
use tori_core::torus_rep::PeriodicFunction;

fn setup() -> impl Strategy<Value = (usize, usize, f64, u64)> {
    (prop::sample::select(vec![8_usize, 16, 32]), 1_usize..=4, 0.01..0.49_f64, any::<u64>())
        .prop_filter("near resonance", |(n, _, w, _)| resonant_wavenumbers(*w, *n, 0.05).is_empty())
}

fn legs(n: usize, m: usize, seed: u64) -> Vec<PeriodicFunction> {
    (0..m).map(|i| common::band_limited(n, seed.wrapping_add(i as u64))).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn small_divisor_matches_dense_solve((n, m, omega, seed) in setup()) {
        let eta = legs(n, m, seed);
        let (xi, avg) = solve_multiple_small_divisor(&eta, omega, DEFAULT_DIVISOR_FLOOR).unwrap();
        let dense = common::dense_multiple_small_divisor(&eta, omega);
        for (a, b) in xi.iter().zip(&dense) {
            prop_assert!(common::max_coeff_diff(a, b) < 1e-10);
        }
        let want = eta.iter().map(|e| e.mean()).sum::<f64>() / m as f64;
        prop_assert!((avg - want).abs() < 1e-15);
        prop_assert!(xi[0].mean().abs() < 1e-15);
    }

    #[test]
    fn non_small_divisor_matches_dense_solve((n, m, omega, seed) in setup(), lam in 0.05..0.8_f64) {
        let eta = legs(n, m, seed);
        let xi = solve_multiple_non_small_divisor(&eta, omega, lam, 1.0, 1e-12).unwrap();
        let dense = common::dense_multiple_non_small_divisor(&eta, omega, lam, 1.0);
        for (a, b) in xi.iter().zip(&dense) {
            prop_assert!(common::max_coeff_diff(a, b) < 1e-10);
        }
    }

    #[test]
    fn single_leg_residual_vanishes((n, _m, omega, seed) in setup()) {
        let eta = common::band_limited(n, seed);
        let (xi, avg) = solve_small_divisor(&eta, omega, DEFAULT_DIVISOR_FLOOR).unwrap();
        let lhs: Vec<f64> = xi.samples().iter().zip(xi.rotate(omega).samples()).map(|(a, b)| a - b).collect();
        for (l, e) in lhs.iter().zip(eta.samples()) {
            prop_assert!((l - (e - avg)).abs() < 1e-11);
        }
    }

    #[test]
    fn solutions_are_linear((n, m, omega, seed) in setup(), a in -3.0..3.0_f64) {
        let eta = legs(n, m, seed);
        let scaled: Vec<PeriodicFunction> = eta.iter().map(|e| e.scale(a)).collect();
        let (x1, _) = solve_multiple_small_divisor(&eta, omega, DEFAULT_DIVISOR_FLOOR).unwrap();
        let (x2, _) = solve_multiple_small_divisor(&scaled, omega, DEFAULT_DIVISOR_FLOOR).unwrap();
        for (p, q) in x1.iter().zip(&x2) {
            for (u, v) in p.samples().iter().zip(q.samples()) {
                prop_assert!((a * u - v).abs() < 1e-11 * (1.0 + u.abs()));
            }
        }
    }
}

#[test]
fn resonances_are_listed() {
    assert_eq!(resonant_wavenumbers(0.25, 32, 1e-8), vec![4, 8, 12]);
    assert!(resonant_wavenumbers(0.031865, 32, 1e-3).is_empty());
}
