//! Periodic functions on the circle and torus states.
//!
//! A [`PeriodicFunction`] keeps `N` grid samples `ζ_j = ζ(j/N)` together
//! with the one-sided DFT coefficients
//! `ζ̃_k = (1/N) Σ_j ζ_j e^{-i2πkj/N}` for `k = 0..=N/2`. `N` must be a
//! power of two. The Nyquist coefficient stands for the real mode
//! `ζ̃_{N/2} cos(πNθ)`; operations that cannot represent it faithfully
//! (derivative, rotation, cohomology) drop it. Tail cleaning keeps it zero
//! in practice.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::{Error, Result};

thread_local! {
    static PLANS: RefCell<(FftPlanner<f64>, HashMap<(usize, bool), Arc<dyn Fft<f64>>>)> =
        RefCell::new((FftPlanner::new(), HashMap::new()));
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cell| {
        let mut guard = cell.borrow_mut();
        let (planner, cache) = &mut *guard;
        cache
            .entry((n, inverse))
            .or_insert_with(|| if inverse { planner.plan_fft_inverse(n) } else { planner.plan_fft_forward(n) })
            .clone()
    })
}

fn check_grid(n: usize) -> Result<()> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::InvalidInput(format!("grid size {n} is not a power of two >= 2")));
    }
    Ok(())
}

/// One-sided normalized DFT of real samples.
pub fn forward_dft(samples: &[f64]) -> Vec<Complex64> {
    let n = samples.len();
    let mut buf: Vec<Complex64> = samples.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    plan(n, false).process(&mut buf);
    let inv_n = 1.0 / n as f64;
    let mut c: Vec<Complex64> = buf[..=n / 2].iter().map(|z| z * inv_n).collect();
    c[0].im = 0.0;
    c[n / 2].im = 0.0;
    c
}

/// Real samples from one-sided coefficients (inverse of [`forward_dft`]).
pub fn inverse_dft(n: usize, coeffs: &[Complex64]) -> Vec<f64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    buf[0] = Complex64::new(coeffs[0].re, 0.0);
    for k in 1..n / 2 {
        buf[k] = coeffs[k];
        buf[n - k] = coeffs[k].conj();
    }
    buf[n / 2] = Complex64::new(coeffs[n / 2].re, 0.0);
    plan(n, true).process(&mut buf);
    buf.iter().map(|z| z.re).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PeriodicFunction {
    samples: Vec<f64>,
    coeffs: Vec<Complex64>,
}

impl PeriodicFunction {
    pub fn from_samples(samples: Vec<f64>) -> Result<Self> {
        check_grid(samples.len())?;
        if samples.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("periodic function samples".into()));
        }
        let coeffs = forward_dft(&samples);
        Ok(Self { samples, coeffs })
    }

    /// Build from `N/2 + 1` one-sided coefficients. Imaginary parts of the
    /// mean and Nyquist coefficients are discarded.
    pub fn from_coeffs(n: usize, mut coeffs: Vec<Complex64>) -> Result<Self> {
        check_grid(n)?;
        if coeffs.len() != n / 2 + 1 {
            return Err(Error::InvalidInput(format!(
                "expected {} coefficients for N = {n}, got {}",
                n / 2 + 1,
                coeffs.len()
            )));
        }
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(Error::NonFinite("periodic function coefficients".into()));
        }
        coeffs[0].im = 0.0;
        coeffs[n / 2].im = 0.0;
        let samples = inverse_dft(n, &coeffs);
        Ok(Self { samples, coeffs })
    }

    pub fn constant(n: usize, value: f64) -> Result<Self> {
        check_grid(n)?;
        let mut c = vec![Complex64::new(0.0, 0.0); n / 2 + 1];
        c[0] = Complex64::new(value, 0.0);
        Ok(Self { samples: vec![value; n], coeffs: c })
    }

    /// Sample an analytic function on the grid.
    pub fn from_fn(n: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_samples((0..n).map(|j| f(j as f64 / n as f64)).collect())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn mean(&self) -> f64 {
        self.coeffs[0].re
    }

    /// Recompute coefficients from the samples, so that the function is a
    /// pure function of its grid values.
    pub fn canonical(&self) -> Self {
        Self { samples: self.samples.clone(), coeffs: forward_dft(&self.samples) }
    }

    fn map_coeffs(&self, f: impl Fn(usize, Complex64) -> Complex64) -> Self {
        let n = self.len();
        let c = self.coeffs.iter().enumerate().map(|(k, &z)| f(k, z)).collect();
        Self::from_coeffs(n, c).expect("coefficient map keeps the grid valid")
    }

    /// Spectral derivative `ζ'(θ)`; the Nyquist mode is dropped.
    pub fn derivative(&self) -> Self {
        let n = self.len();
        self.map_coeffs(|k, z| {
            if k == n / 2 {
                Complex64::new(0.0, 0.0)
            } else {
                z * Complex64::new(0.0, 2.0 * PI * k as f64)
            }
        })
    }

    /// Translation `θ ↦ ζ(θ + δ)`. Exact for functions without Nyquist
    /// content; the Nyquist mode is kept only through its cosine part.
    pub fn rotate(&self, delta: f64) -> Self {
        let n = self.len();
        self.map_coeffs(|k, z| {
            if k == n / 2 {
                z * (PI * n as f64 * delta).cos()
            } else {
                z * Complex64::from_polar(1.0, 2.0 * PI * k as f64 * delta)
            }
        })
    }

    /// Zero every coefficient with `k > cutoff`.
    pub fn clean_tail(&self, cutoff: usize) -> Self {
        if self.coeffs.iter().skip(cutoff + 1).all(|c| c.re == 0.0 && c.im == 0.0) {
            return self.clone();
        }
        self.map_coeffs(|k, z| if k > cutoff { Complex64::new(0.0, 0.0) } else { z })
    }

    /// Largest coefficient modulus beyond `cutoff`.
    pub fn tail_norm(&self, cutoff: usize) -> f64 {
        self.coeffs.iter().skip(cutoff + 1).map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Spectral interpolation onto a grid of size `n_new`.
    ///
    /// Upsampling zero-pads (splitting the old Nyquist mode); downsampling
    /// truncates and folds the new Nyquist coefficient back to a real
    /// cosine amplitude, so that up-then-down is exact.
    pub fn resample(&self, n_new: usize) -> Result<Self> {
        check_grid(n_new)?;
        let n = self.len();
        if n_new == n {
            return Ok(self.clone());
        }
        let mut c = vec![Complex64::new(0.0, 0.0); n_new / 2 + 1];
        if n_new > n {
            c[..n / 2].copy_from_slice(&self.coeffs[..n / 2]);
            c[n / 2] = self.coeffs[n / 2] * 0.5;
        } else {
            c[..n_new / 2].copy_from_slice(&self.coeffs[..n_new / 2]);
            c[n_new / 2] = Complex64::new(2.0 * self.coeffs[n_new / 2].re, 0.0);
        }
        Self::from_coeffs(n_new, c)
    }

    /// Evaluate the trigonometric interpolant at an arbitrary `θ`.
    pub fn eval(&self, theta: f64) -> f64 {
        let n = self.len();
        let mut s = self.coeffs[0].re;
        for k in 1..n / 2 {
            let e = Complex64::from_polar(1.0, 2.0 * PI * k as f64 * theta);
            s += 2.0 * (self.coeffs[k] * e).re;
        }
        s + self.coeffs[n / 2].re * (PI * n as f64 * theta).cos()
    }

    pub fn scale(&self, a: f64) -> Self {
        Self { samples: self.samples.iter().map(|x| a * x).collect(), coeffs: self.coeffs.iter().map(|c| c * a).collect() }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::InvalidInput("grid size mismatch".into()));
        }
        Self::from_samples(self.samples.iter().zip(&other.samples).map(|(a, b)| a + b).collect())
    }

    /// Pointwise product evaluated on the grid (aliasing not removed).
    pub fn mul(&self, other: &Self) -> Result<Self> {
        if self.len() != other.len() {
            return Err(Error::InvalidInput("grid size mismatch".into()));
        }
        Self::from_samples(self.samples.iter().zip(&other.samples).map(|(a, b)| a * b).collect())
    }

    pub fn max_abs(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Cutoff used by tail cleaning: coefficients with `k > N / divisor` are
/// zeroed.
pub fn tail_cutoff(n: usize, divisor: usize) -> usize {
    n / divisor.max(2)
}

/// Default tail divisor (`k > N/4` is cleaned).
pub const DEFAULT_TAIL_DIVISOR: usize = 4;

/// A curve `θ ↦ K(θ) ∈ R^d`, stored component-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveMap {
    comps: Vec<PeriodicFunction>,
}

impl CurveMap {
    pub fn new(comps: Vec<PeriodicFunction>) -> Result<Self> {
        if comps.is_empty() {
            return Err(Error::InvalidInput("curve without components".into()));
        }
        let n = comps[0].len();
        if comps.iter().any(|c| c.len() != n) {
            return Err(Error::InvalidInput("curve components on different grids".into()));
        }
        Ok(Self { comps })
    }

    /// Build from per-grid-point vectors `points[j]`.
    pub fn from_points(points: &[Vec<f64>]) -> Result<Self> {
        let n = points.len();
        check_grid(n)?;
        let d = points[0].len();
        let comps = (0..d)
            .map(|c| PeriodicFunction::from_samples(points.iter().map(|p| p[c]).collect()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { comps })
    }

    pub fn constant(n: usize, value: &[f64]) -> Result<Self> {
        Self::new(value.iter().map(|&v| PeriodicFunction::constant(n, v)).collect::<Result<_>>()?)
    }

    pub fn dim(&self) -> usize {
        self.comps.len()
    }

    pub fn grid_size(&self) -> usize {
        self.comps[0].len()
    }

    pub fn comps(&self) -> &[PeriodicFunction] {
        &self.comps
    }

    pub fn comp(&self, c: usize) -> &PeriodicFunction {
        &self.comps[c]
    }

    pub fn point(&self, j: usize) -> Vec<f64> {
        self.comps.iter().map(|c| c.samples()[j]).collect()
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.grid_size()).map(|j| self.point(j)).collect()
    }

    pub fn eval(&self, theta: f64) -> Vec<f64> {
        self.comps.iter().map(|c| c.eval(theta)).collect()
    }

    pub fn mean(&self) -> Vec<f64> {
        self.comps.iter().map(|c| c.mean()).collect()
    }

    fn map(&self, f: impl Fn(&PeriodicFunction) -> PeriodicFunction) -> Self {
        Self { comps: self.comps.iter().map(f).collect() }
    }

    pub fn derivative(&self) -> Self {
        self.map(|c| c.derivative())
    }

    pub fn rotate(&self, delta: f64) -> Self {
        self.map(|c| c.rotate(delta))
    }

    pub fn clean_tail(&self, cutoff: usize) -> Self {
        self.map(|c| c.clean_tail(cutoff))
    }

    pub fn canonical(&self) -> Self {
        self.map(|c| c.canonical())
    }

    pub fn resample(&self, n_new: usize) -> Result<Self> {
        Ok(Self { comps: self.comps.iter().map(|c| c.resample(n_new)).collect::<Result<_>>()? })
    }

    pub fn tail_norm(&self, cutoff: usize) -> f64 {
        self.comps.iter().map(|c| c.tail_norm(cutoff)).fold(0.0, f64::max)
    }

    /// `⟨‖K‖²⟩`, the grid average of the squared Euclidean norm.
    pub fn mean_sq_norm(&self) -> f64 {
        let n = self.grid_size() as f64;
        self.comps.iter().map(|c| c.samples().iter().map(|x| x * x).sum::<f64>()).sum::<f64>() / n
    }

    /// Add per-point increments `delta[j]` on the grid.
    pub fn add_points(&self, delta: &[Vec<f64>]) -> Result<Self> {
        let pts: Vec<Vec<f64>> =
            self.points().iter().zip(delta).map(|(p, d)| p.iter().zip(d).map(|(a, b)| a + b).collect()).collect();
        Self::from_points(&pts)
    }

    pub fn axpy(&self, a: f64, other: &Self) -> Result<Self> {
        Ok(Self {
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(x, y)| x.add(&y.scale(a)))
                .collect::<Result<_>>()?,
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().map(|c| c.max_abs()).fold(0.0, f64::max)
    }
}

/// A field of `rows × cols` matrices on the grid, stored entry-wise.
#[derive(Debug, Clone)]
pub struct MatrixField {
    rows: usize,
    cols: usize,
    entries: Vec<PeriodicFunction>,
}

impl MatrixField {
    pub fn from_matrices(mats: &[DMatrix<f64>]) -> Result<Self> {
        let n = mats.len();
        check_grid(n)?;
        let (rows, cols) = mats[0].shape();
        let mut entries = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                entries.push(PeriodicFunction::from_samples(mats.iter().map(|m| m[(r, c)]).collect())?);
            }
        }
        Ok(Self { rows, cols, entries })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn grid_size(&self) -> usize {
        self.entries[0].len()
    }

    pub fn at(&self, j: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| self.entries[r * self.cols + c].samples()[j])
    }

    pub fn matrices(&self) -> Vec<DMatrix<f64>> {
        (0..self.grid_size()).map(|j| self.at(j)).collect()
    }

    pub fn entry(&self, r: usize, c: usize) -> &PeriodicFunction {
        &self.entries[r * self.cols + c]
    }

    pub fn rotate(&self, delta: f64) -> Self {
        Self { rows: self.rows, cols: self.cols, entries: self.entries.iter().map(|e| e.rotate(delta)).collect() }
    }

    /// Grid average of the matrix.
    pub fn mean(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |r, c| self.entries[r * self.cols + c].mean())
    }
}

/// A torus of the time-`T` map in `m`-leg multiple-shooting form, with its
/// rank-one invariant bundle.
///
/// Invariance: `φ_{T/m}(K_i(θ)) = K_{i+1}(θ + ω/m)` and
/// `Dφ_{T/m}(K_i(θ)) W_i(θ) = λ W_{i+1}(θ + ω/m)`, indices modulo `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct TorusState {
    pub k: Vec<CurveMap>,
    pub w: Vec<CurveMap>,
    pub period: f64,
    pub omega: f64,
    pub lambda: f64,
    pub energy: f64,
}

impl TorusState {
    pub fn legs(&self) -> usize {
        self.k.len()
    }

    pub fn grid_size(&self) -> usize {
        self.k[0].grid_size()
    }

    pub fn dim(&self) -> usize {
        self.k[0].dim()
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.legs();
        if m == 0 || self.w.len() != m {
            return Err(Error::InvalidInput("torus needs matching K and W legs".into()));
        }
        let n = self.grid_size();
        let d = self.dim();
        if d % 2 != 0 {
            return Err(Error::InvalidInput("phase space dimension must be even".into()));
        }
        for c in self.k.iter().chain(self.w.iter()) {
            if c.grid_size() != n || c.dim() != d {
                return Err(Error::InvalidInput("inconsistent leg shapes".into()));
            }
        }
        for v in [self.period, self.omega, self.lambda, self.energy] {
            if !v.is_finite() {
                return Err(Error::NonFinite("torus scalar".into()));
            }
        }
        Ok(())
    }

    pub fn clean_tail(&self, cutoff: usize) -> Self {
        Self {
            k: self.k.iter().map(|c| c.clean_tail(cutoff)).collect(),
            w: self.w.iter().map(|c| c.clean_tail(cutoff)).collect(),
            ..self.clone()
        }
    }

    pub fn canonical(&self) -> Self {
        Self {
            k: self.k.iter().map(|c| c.canonical()).collect(),
            w: self.w.iter().map(|c| c.canonical()).collect(),
            ..self.clone()
        }
    }

    /// Change the grid size. When halving, the tail beyond the new quarter
    /// band is cleaned first.
    pub fn resample(&self, n_new: usize) -> Result<Self> {
        let src = if n_new < self.grid_size() { self.clean_tail(n_new / 2) } else { self.clone() };
        Ok(Self {
            k: src.k.iter().map(|c| c.resample(n_new)).collect::<Result<_>>()?,
            w: src.w.iter().map(|c| c.resample(n_new)).collect::<Result<_>>()?,
            ..src
        })
    }

    /// Compound norm `sqrt(T² + λ² + Σ_i(⟨‖K_i‖²⟩ + ⟨‖W_i‖²⟩))`.
    pub fn compound_norm(&self) -> f64 {
        let s: f64 = self.k.iter().chain(self.w.iter()).map(|c| c.mean_sq_norm()).sum();
        (self.period * self.period + self.lambda * self.lambda + s).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_fn(n: usize) -> PeriodicFunction {
        PeriodicFunction::from_fn(n, |t| {
            0.3 + (2.0 * PI * t).cos() - 0.5 * (6.0 * PI * t).sin() + 0.1 * (10.0 * PI * t + 0.3).cos()
        })
        .unwrap()
    }

    #[test]
    fn dft_matches_direct_sum() {
        let f = sample_fn(16);
        let n = 16;
        for k in 0..=n / 2 {
            let mut s = Complex64::new(0.0, 0.0);
            for (j, x) in f.samples().iter().enumerate() {
                s += Complex64::from_polar(*x, -2.0 * PI * (k * j) as f64 / n as f64);
            }
            s /= n as f64;
            assert!((s - f.coeffs()[k]).norm() < 1e-15);
        }
    }

    #[test]
    fn derivative_of_trig_polynomial() {
        let f = sample_fn(32);
        let d = f.derivative();
        for j in 0..32 {
            let t = j as f64 / 32.0;
            let exact = -2.0 * PI * (2.0 * PI * t).sin() - 0.5 * 6.0 * PI * (6.0 * PI * t).cos()
                - 0.1 * 10.0 * PI * (10.0 * PI * t + 0.3).sin();
            assert!((d.samples()[j] - exact).abs() < 1e-12);
        }
    }

    #[test]
    fn rotation_by_zero_is_identity() {
        let f = PeriodicFunction::from_samples((0..16).map(|j| (j as f64).sin() + 0.1 * j as f64).collect()).unwrap();
        let g = f.rotate(0.0);
        for (a, b) in f.samples().iter().zip(g.samples()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn resample_up_then_down_is_exact() {
        let f = PeriodicFunction::from_samples((0..16).map(|j| ((j * j) as f64).cos()).collect()).unwrap();
        let back = f.resample(64).unwrap().resample(16).unwrap();
        for (a, b) in f.coeffs().iter().zip(back.coeffs()) {
            assert!((a - b).norm() < 1e-15);
        }
    }

    #[test]
    fn eval_interpolates_grid() {
        let f = sample_fn(16);
        for j in 0..16 {
            assert!((f.eval(j as f64 / 16.0) - f.samples()[j]).abs() < 1e-13);
        }
        assert!((f.eval(0.123) - sample_fn(64).resample(16).unwrap().eval(0.123)).abs() < 1e-13);
    }

    #[test]
    fn rejects_bad_grid() {
        assert!(PeriodicFunction::from_samples(vec![0.0; 12]).is_err());
        assert!(PeriodicFunction::from_samples(vec![f64::NAN; 8]).is_err());
    }
}
