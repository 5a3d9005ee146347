mod common;

use proptest::prelude::*;
use tori_core::torus_rep::{forward_dft, inverse_dft, tail_cutoff, CurveMap, PeriodicFunction};

fn grid() -> impl Strategy<Value = usize> {
    prop::sample::select(vec![8_usize, 16, 32, 64])
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn dft_round_trip(n in grid(), seed in any::<u64>()) {
        let f = common::band_limited(n, seed);
        let back = inverse_dft(n, &forward_dft(f.samples()));
        prop_assert!(max_diff(&back, f.samples()) < 1e-13);
    }

    #[test]
    fn rotations_compose(n in grid(), seed in any::<u64>(), a in -1.0..1.0_f64, b in -1.0..1.0_f64) {
        let f = common::band_limited(n, seed);
        let lhs = f.rotate(a).rotate(b);
        let rhs = f.rotate(a + b);
        prop_assert!(max_diff(lhs.samples(), rhs.samples()) < 1e-12);
    }

    #[test]
    fn rotation_matches_evaluation(n in grid(), seed in any::<u64>(), a in 0.0..1.0_f64) {
        let f = common::band_limited(n, seed);
        let r = f.rotate(a);
        for j in [0, n / 3, n - 1] {
            let th = j as f64 / n as f64;
            prop_assert!((r.samples()[j] - f.eval(th + a)).abs() < 1e-12);
        }
    }

    #[test]
    fn derivative_commutes_with_rotation(n in grid(), seed in any::<u64>(), a in 0.0..1.0_f64) {
        let f = common::band_limited(n, seed);
        let lhs = f.rotate(a).derivative();
        let rhs = f.derivative().rotate(a);
        prop_assert!(max_diff(lhs.samples(), rhs.samples()) < 1e-10);
        prop_assert!(f.derivative().mean().abs() < 1e-12);
    }

    #[test]
    fn resampling_preserves_band_limited_functions(n in grid(), seed in any::<u64>(), up in 1_u32..3) {
        let f = common::band_limited(n, seed);
        let g = f.resample(n << up).unwrap();
        for th in [0.1, 0.37, 0.9] {
            prop_assert!((f.eval(th) - g.eval(th)).abs() < 1e-12);
        }
        let back = g.resample(n).unwrap();
        prop_assert!(max_diff(back.samples(), f.samples()) < 1e-13);
    }

    #[test]
    fn tail_cleaning_is_idempotent_and_kills_the_tail(n in grid(), seed in any::<u64>()) {
        let f = PeriodicFunction::from_samples(common::band_limited(n, seed).samples().iter().map(|x| x * x).collect()).unwrap();
        let cut = tail_cutoff(n, 4);
        let c = f.clean_tail(cut);
        prop_assert_eq!(c.tail_norm(cut), 0.0);
        prop_assert_eq!(c.clean_tail(cut), c.clone());
    }

    #[test]
    fn canonical_is_idempotent(n in grid(), seed in any::<u64>(), a in 0.0..1.0_f64) {
        let f = common::band_limited(n, seed).rotate(a);
        let c = f.canonical();
        prop_assert_eq!(c.canonical(), c.clone());
        prop_assert!(max_diff(c.samples(), f.samples()) == 0.0);
    }

    #[test]
    fn product_of_low_modes_is_alias_free(n in grid(), s1 in any::<u64>(), s2 in any::<u64>()) {
        let f = common::band_limited(n, s1);
        let g = common::band_limited(n, s2);
        let p = f.mul(&g).unwrap();
        let th = 0.123;
        prop_assert!((p.eval(th) - f.eval(th) * g.eval(th)).abs() < 1e-12);
    }

    #[test]
    fn curve_norms_and_axpy(n in grid(), seed in any::<u64>(), a in -2.0..2.0_f64) {
        let comps: Vec<PeriodicFunction> = (0..3).map(|i| common::band_limited(n, seed.wrapping_add(i))).collect();
        let k = CurveMap::new(comps).unwrap();
        let z = k.axpy(-1.0, &k).unwrap();
        prop_assert_eq!(z.max_abs(), 0.0);
        let s = k.axpy(a, &k).unwrap();
        prop_assert!((s.mean_sq_norm() - (1.0 + a).powi(2) * k.mean_sq_norm()).abs() < 1e-12 * (1.0 + k.mean_sq_norm()));
    }
}
