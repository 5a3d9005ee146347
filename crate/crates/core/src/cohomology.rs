//! Cohomological equations over a rigid rotation, solved in Fourier space.
//!
//! Small-divisor form: `ξ(θ) - ξ(θ+ω) = η(θ)`; non-small-divisor form:
//! `λ ξ(θ) - μ ξ(θ+ω) = η(θ)` with `|λ| ≠ |μ|`. The multiple-shooting
//! versions couple `m` unknowns through `θ ↦ θ + ω/m` and close the loop
//! with `ξ_m = ξ_0`. Nyquist coefficients of solutions are set to zero.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::torus_rep::PeriodicFunction;
use crate::{Error, Result};

pub const DEFAULT_DIVISOR_FLOOR: f64 = 1e-8;

fn check_input(eta: &[PeriodicFunction], omega: f64) -> Result<usize> {
    if eta.is_empty() {
        return Err(Error::InvalidInput("empty right-hand side".into()));
    }
    if !omega.is_finite() {
        return Err(Error::NonFinite("rotation number".into()));
    }
    let n = eta[0].len();
    if eta.iter().any(|e| e.len() != n) {
        return Err(Error::InvalidInput("right-hand sides on different grids".into()));
    }
    Ok(n)
}

fn zero() -> Complex64 {
    Complex64::new(0.0, 0.0)
}

/// Wavenumbers `1 ≤ k < n/2` with `|1 - e^{2πikω}| < floor`.
pub fn resonant_wavenumbers(omega: f64, n: usize, floor: f64) -> Vec<usize> {
    (1..n / 2)
        .filter(|&k| (Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, 2.0 * PI * k as f64 * omega)).norm() < floor)
        .collect()
}

/// Solve `ξ(θ) - ξ(θ+ω) = η(θ) - ⟨η⟩` with `⟨ξ⟩ = 0`. Returns `ξ` and the
/// mean `⟨η⟩` that was removed.
pub fn solve_small_divisor(eta: &PeriodicFunction, omega: f64, floor: f64) -> Result<(PeriodicFunction, f64)> {
    let n = check_input(std::slice::from_ref(eta), omega)?;
    let mut c = vec![zero(); n / 2 + 1];
    for (k, ck) in c.iter_mut().enumerate().take(n / 2).skip(1) {
        let d = Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, 2.0 * PI * k as f64 * omega);
        if d.norm() < floor {
            return Err(Error::SmallDivisor { k, modulus: d.norm() });
        }
        *ck = eta.coeffs()[k] / d;
    }
    Ok((PeriodicFunction::from_coeffs(n, c)?, eta.mean()))
}

/// Solve `ξ_i(θ) - ξ_{i+1}(θ+ω/m) = η_i(θ) - ⟨η⟩`, `i = 0..m-1`, with
/// `⟨ξ_0⟩ = 0`, where `⟨η⟩ = (1/m) Σ_i ⟨η_i⟩` is returned.
///
/// Each leg is obtained from the telescoped identity
/// `ξ_j(θ) - ξ_j(θ+ω) = Σ_i η_{j+i}(θ + iω/m)` and the averages from
/// `⟨ξ_j⟩ = ⟨ξ_{j-1}⟩ - ⟨η_{j-1}⟩ + ⟨η⟩`.
pub fn solve_multiple_small_divisor(
    eta: &[PeriodicFunction],
    omega: f64,
    floor: f64,
) -> Result<(Vec<PeriodicFunction>, f64)> {
    let n = check_input(eta, omega)?;
    let m = eta.len();
    let avg = eta.iter().map(|e| e.mean()).sum::<f64>() / m as f64;
    let mut divisors = vec![zero(); n / 2];
    for (k, d) in divisors.iter_mut().enumerate().skip(1) {
        *d = Complex64::new(1.0, 0.0) - Complex64::from_polar(1.0, 2.0 * PI * k as f64 * omega);
        if d.norm() < floor {
            return Err(Error::SmallDivisor { k, modulus: d.norm() });
        }
    }
    let mut out = Vec::with_capacity(m);
    let mut mean = 0.0;
    for j in 0..m {
        if j > 0 {
            mean -= eta[j - 1].mean() - avg;
        }
        let mut c = vec![zero(); n / 2 + 1];
        c[0] = Complex64::new(mean, 0.0);
        for k in 1..n / 2 {
            let mut s = zero();
            for i in 0..m {
                let phase = Complex64::from_polar(1.0, 2.0 * PI * k as f64 * i as f64 * omega / m as f64);
                s += eta[(j + i) % m].coeffs()[k] * phase;
            }
            c[k] = s / divisors[k];
        }
        out.push(PeriodicFunction::from_coeffs(n, c)?);
    }
    Ok((out, avg))
}

fn check_separation(lam: f64, mu: f64, m: usize, floor: f64) -> Result<f64> {
    if !lam.is_finite() || !mu.is_finite() {
        return Err(Error::NonFinite("multiplier".into()));
    }
    let a = lam.abs().powi(m as i32);
    let b = mu.abs().powi(m as i32);
    let scale = a.max(b);
    if scale == 0.0 || (a - b).abs() < floor * scale {
        return Err(Error::NotHyperbolic { lam: lam.abs(), mu: mu.abs() });
    }
    Ok(scale)
}

/// Solve `λ ξ(θ) - μ ξ(θ+ω) = η(θ)`.
pub fn solve_non_small_divisor(
    eta: &PeriodicFunction,
    omega: f64,
    lam: f64,
    mu: f64,
    floor: f64,
) -> Result<PeriodicFunction> {
    Ok(solve_multiple_non_small_divisor(std::slice::from_ref(eta), omega, lam, mu, floor)?.remove(0))
}

/// Solve `λ ξ_i(θ) - μ ξ_{i+1}(θ+ω/m) = η_i(θ)`, `i = 0..m-1`, through
/// `λ^m ξ_j(θ) - μ^m ξ_j(θ+ω) = Σ_i μ^i λ^{m-1-i} η_{j+i}(θ + iω/m)`.
pub fn solve_multiple_non_small_divisor(
    eta: &[PeriodicFunction],
    omega: f64,
    lam: f64,
    mu: f64,
    floor: f64,
) -> Result<Vec<PeriodicFunction>> {
    let n = check_input(eta, omega)?;
    let m = eta.len();
    let scale = check_separation(lam, mu, m, floor)?;
    let lm = lam.powi(m as i32);
    let mm = mu.powi(m as i32);
    let weights: Vec<f64> = (0..m).map(|i| mu.powi(i as i32) * lam.powi((m - 1 - i) as i32)).collect();
    let mut divisors = vec![zero(); n / 2];
    for (k, d) in divisors.iter_mut().enumerate() {
        *d = Complex64::new(lm, 0.0) - Complex64::from_polar(mm, 2.0 * PI * k as f64 * omega);
        if d.norm() < floor * scale {
            return Err(Error::SmallDivisor { k, modulus: d.norm() / scale });
        }
    }
    let mut out = Vec::with_capacity(m);
    for j in 0..m {
        let mut c = vec![zero(); n / 2 + 1];
        for k in 0..n / 2 {
            let mut s = zero();
            for i in 0..m {
                let phase = Complex64::from_polar(weights[i], 2.0 * PI * k as f64 * i as f64 * omega / m as f64);
                s += eta[(j + i) % m].coeffs()[k] * phase;
            }
            c[k] = s / divisors[k];
        }
        out.push(PeriodicFunction::from_coeffs(n, c)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn band_limited(n: usize, seed: u64) -> PeriodicFunction {
        let mut c = vec![zero(); n / 2 + 1];
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        c[0] = Complex64::new(next(), 0.0);
        for ck in c.iter_mut().take(n / 4 + 1).skip(1) {
            *ck = Complex64::new(next(), next());
        }
        PeriodicFunction::from_coeffs(n, c).unwrap()
    }

    #[test]
    fn small_divisor_residual() {
        let omega = (5f64.sqrt() - 1.0) / 2.0;
        let eta = band_limited(32, 3);
        let (xi, avg) = solve_small_divisor(&eta, omega, 1e-8).unwrap();
        let res = xi.add(&xi.rotate(omega).scale(-1.0)).unwrap();
        for (r, e) in res.samples().iter().zip(eta.samples()) {
            assert!((r - (e - avg)).abs() < 1e-12);
        }
        assert!(xi.mean().abs() < 1e-16);
    }

    #[test]
    fn resonant_rotation_is_rejected() {
        let eta = band_limited(32, 5);
        let err = solve_small_divisor(&eta, 0.25, 1e-8).unwrap_err();
        assert!(matches!(err, Error::SmallDivisor { k: 4, .. }));
    }

    #[test]
    fn equal_moduli_are_rejected() {
        let eta = band_limited(16, 7);
        assert!(matches!(
            solve_non_small_divisor(&eta, 0.3, 1.0, -1.0, 1e-8),
            Err(Error::NotHyperbolic { .. })
        ));
    }
}
