//! Dense oracles shared by the integration tests.

#![allow(dead_code)]

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;
use tori_core::torus_rep::PeriodicFunction;

/// Real periodic function on `n` points with random modes below `n/4`.
pub fn band_limited(n: usize, seed: u64) -> PeriodicFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut c = vec![Complex64::new(0.0, 0.0); n / 2 + 1];
    c[0] = Complex64::new(rng.gen_range(-1.0..1.0), 0.0);
    for ck in c.iter_mut().take(n.div_ceil(4)).skip(1) {
        *ck = Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    }
    PeriodicFunction::from_coeffs(n, c).unwrap()
}

/// Matrix of `f ↦ f(· + a)` on trigonometric interpolants of degree below
/// `n/2` (the Nyquist mode is dropped).
pub fn shift_matrix(n: usize, a: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |j, l| {
        let d = (j as f64 - l as f64) / n as f64 + a;
        let kmax = (n / 2) as i64 - 1;
        (-kmax..=kmax).map(|k| (2.0 * PI * k as f64 * d).cos()).sum::<f64>() / n as f64
    })
}

/// Dense solve of `ξ_i - ξ_{i+1}(·+ω/m) = η_i - ⟨η⟩` with `⟨ξ_0⟩ = 0`
/// (`ξ_m ≡ ξ_0`), in sample space. The operator `A` has the constants as
/// kernel and its range has zero total sum, so `A + u wᵀ` with `u = 1` and
/// `w` the mean of `ξ_0` is invertible and picks the normalized solution.
pub fn dense_multiple_small_divisor(eta: &[PeriodicFunction], omega: f64) -> Vec<Vec<f64>> {
    let m = eta.len();
    let n = eta[0].len();
    let s = shift_matrix(n, omega / m as f64);
    let avg = eta.iter().map(|e| e.mean()).sum::<f64>() / m as f64;
    let mut a = DMatrix::zeros(m * n, m * n);
    let mut b = nalgebra::DVector::zeros(m * n);
    for i in 0..m {
        let nx = (i + 1) % m;
        for j in 0..n {
            a[(i * n + j, i * n + j)] += 1.0;
            for l in 0..n {
                a[(i * n + j, nx * n + l)] -= s[(j, l)];
            }
            b[i * n + j] = eta[i].samples()[j] - avg;
        }
    }
    for r in 0..m * n {
        for l in 0..n {
            a[(r, l)] += 1.0 / n as f64;
        }
    }
    let x = a.lu().solve(&b).unwrap();
    (0..m).map(|i| x.rows(i * n, n).iter().cloned().collect()).collect()
}

/// Dense solve of `λ ξ_i - μ ξ_{i+1}(·+ω/m) = η_i`.
pub fn dense_multiple_non_small_divisor(eta: &[PeriodicFunction], omega: f64, lam: f64, mu: f64) -> Vec<Vec<f64>> {
    let m = eta.len();
    let n = eta[0].len();
    let s = shift_matrix(n, omega / m as f64);
    let mut a = DMatrix::zeros(m * n, m * n);
    let mut b = nalgebra::DVector::zeros(m * n);
    for i in 0..m {
        let nx = (i + 1) % m;
        for j in 0..n {
            a[(i * n + j, i * n + j)] += lam;
            for l in 0..n {
                a[(i * n + j, nx * n + l)] -= mu * s[(j, l)];
            }
            b[i * n + j] = eta[i].samples()[j];
        }
    }
    let x = a.lu().solve(&b).unwrap();
    (0..m).map(|i| x.rows(i * n, n).iter().cloned().collect()).collect()
}

/// Largest Fourier coefficient modulus of `a - b`.
pub fn max_coeff_diff(a: &PeriodicFunction, b: &[f64]) -> f64 {
    let d: Vec<f64> = a.samples().iter().zip(b).map(|(x, y)| x - y).collect();
    PeriodicFunction::from_samples(d).unwrap().coeffs().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

/// Small torus around the `ρ = 0.031865` vertical orbit on 4 legs of 32
/// points, converged to `err < 1e-11`.
pub fn converged_torus() -> tori_core::torus_rep::TorusState {
    use tori_core::newton::{refine, Mode, NewtonConfig};
    use tori_core::seeds::{lyapunov_po_target, seed_from_po, PoConfig, PoFamily, PoTarget};
    let m = tori_core::symplectic_model::Rtbp::earth_moon();
    let po = lyapunov_po_target(&m, PoFamily::Vertical, PoTarget::Rotation(0.031865), &PoConfig::default()).unwrap();
    let seed = seed_from_po(&m, &po, 4, 32, 1e-3, &Default::default()).unwrap();
    let cfg = NewtonConfig { eps: 1e-11, eps_w: 1e-9, ..Default::default() };
    refine(&m, &seed, &cfg, Mode::FixedCalabi, None).unwrap().state
}
