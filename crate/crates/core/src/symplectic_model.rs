//! Symplectic structure and Hamiltonian models.
//!
//! Coordinates are `z = (x, p)` with `n` degrees of freedom. The structure
//! is the standard one: `Ω₀ = [[0,-I],[I,0]]`, primitive one-form
//! `a₀(z) = ½ (p, -x)`, compatible complex structure `J₀ = Ω₀` and
//! Euclidean metric. Vector fields follow `X_H = Ω₀⁻¹ ∇H`, so that
//! `ẋ = ∂H/∂p` and `ṗ = -∂H/∂x`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::linalg::{eigenpairs, omega0};
use crate::{Error, Result};

/// Earth–Moon mass parameter.
pub const EARTH_MOON_MU: f64 = 1.215_058_560_962_404e-2;

/// Default collision radius around each primary.
pub const DEFAULT_COLLISION_RADIUS: f64 = 1e-4;

/// The standard exact symplectic structure on `R^{2n}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymplecticStructure {
    pub n: usize,
}

impl SymplecticStructure {
    pub fn standard(n: usize) -> Self {
        Self { n }
    }

    pub fn dim(&self) -> usize {
        2 * self.n
    }

    pub fn omega(&self, _z: &[f64]) -> DMatrix<f64> {
        omega0(self.n)
    }

    pub fn omega_inv(&self, _z: &[f64]) -> DMatrix<f64> {
        -omega0(self.n)
    }

    /// Primitive one-form `a(z)` with `Ω = Da(z)ᵀ - Da(z)`.
    pub fn action(&self, z: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut a = vec![0.0; 2 * n];
        for i in 0..n {
            a[i] = 0.5 * z[n + i];
            a[n + i] = -0.5 * z[i];
        }
        a
    }

    pub fn action_jacobian(&self, _z: &[f64]) -> DMatrix<f64> {
        -0.5 * omega0(self.n)
    }

    pub fn complex_structure(&self, _z: &[f64]) -> DMatrix<f64> {
        omega0(self.n)
    }

    pub fn metric(&self, _z: &[f64]) -> DMatrix<f64> {
        DMatrix::identity(2 * self.n, 2 * self.n)
    }
}

/// An autonomous Hamiltonian system with the standard structure.
///
/// Matrices are written row-major into caller-provided slices so the
/// integrator hot path does not allocate.
pub trait HamiltonianModel: Sync + Send {
    /// Number of degrees of freedom `n`.
    fn dof(&self) -> usize;

    fn hamiltonian(&self, z: &[f64]) -> Result<f64>;

    fn gradient(&self, z: &[f64], out: &mut [f64]) -> Result<()>;

    /// `X_H(z)`.
    fn vector_field(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        let n = self.dof();
        let mut g = vec![0.0; 2 * n];
        self.gradient(z, &mut g)?;
        for i in 0..n {
            out[i] = g[n + i];
            out[n + i] = -g[i];
        }
        Ok(())
    }

    /// `DX_H(z)`, row-major `2n × 2n`.
    fn jacobian(&self, z: &[f64], out: &mut [f64]) -> Result<()>;

    /// Second derivative `D²X_H(z)[u, v]`.
    fn hessian_action(&self, z: &[f64], u: &[f64], v: &[f64], out: &mut [f64]) -> Result<()>;

    fn structure(&self) -> SymplecticStructure {
        SymplecticStructure::standard(self.dof())
    }

    fn jacobian_matrix(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        let d = 2 * self.dof();
        let mut buf = vec![0.0; d * d];
        self.jacobian(z, &mut buf)?;
        Ok(DMatrix::from_row_slice(d, d, &buf))
    }

    fn vector_field_vec(&self, z: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; 2 * self.dof()];
        self.vector_field(z, &mut out)?;
        Ok(out)
    }
}

/// Spatial circular restricted three-body problem in synodic coordinates.
///
/// `H = ½|p|² - x₁p₂ + x₂p₁ - (1-μ)/r₁ - μ/r₂` with the large primary at
/// `(μ,0,0)` and the small one at `(μ-1,0,0)`.
#[derive(Debug, Clone, Copy)]
pub struct Rtbp {
    pub mu: f64,
    pub collision_radius: f64,
}

impl Default for Rtbp {
    fn default() -> Self {
        Self::earth_moon()
    }
}

struct Primaries {
    d1: [f64; 3],
    d2: [f64; 3],
    c1: f64,
    c2: f64,
    r1: f64,
    r2: f64,
}

impl Rtbp {
    pub fn new(mu: f64) -> Result<Self> {
        if !(mu > 0.0 && mu <= 0.5) {
            return Err(Error::InvalidInput(format!("mass parameter {mu} outside (0, 1/2]")));
        }
        Ok(Self { mu, collision_radius: DEFAULT_COLLISION_RADIUS })
    }

    pub fn earth_moon() -> Self {
        Self { mu: EARTH_MOON_MU, collision_radius: DEFAULT_COLLISION_RADIUS }
    }

    pub fn with_collision_radius(mut self, r: f64) -> Self {
        self.collision_radius = r;
        self
    }

    fn primaries(&self, z: &[f64]) -> Result<Primaries> {
        if z.iter().take(6).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("three-body state".into()));
        }
        let mu = self.mu;
        let d1 = [z[0] - mu, z[1], z[2]];
        let d2 = [z[0] - mu + 1.0, z[1], z[2]];
        let r1 = (d1[0] * d1[0] + d1[1] * d1[1] + d1[2] * d1[2]).sqrt();
        let r2 = (d2[0] * d2[0] + d2[1] * d2[1] + d2[2] * d2[2]).sqrt();
        let r = r1.min(r2);
        if r < self.collision_radius {
            return Err(Error::Collision { r });
        }
        Ok(Primaries { d1, d2, c1: 1.0 - mu, c2: mu, r1, r2 })
    }

    /// Collinear point between the primaries.
    pub fn l1(&self) -> Result<[f64; 6]> {
        let g = l1_gamma(self.mu)?;
        let x = self.mu - 1.0 + g;
        Ok([x, 0.0, 0.0, 0.0, x, 0.0])
    }

    /// Energy of the collinear point between the primaries.
    pub fn l1_energy(&self) -> Result<f64> {
        self.hamiltonian(&self.l1()?)
    }
}

/// Distance from the small primary to the inner collinear point: root in
/// `(0,1)` of `γ⁵ - (3-μ)γ⁴ + (3-2μ)γ³ - μγ² + 2μγ - μ`.
pub fn l1_gamma(mu: f64) -> Result<f64> {
    let f = |g: f64| ((((g - (3.0 - mu)) * g + (3.0 - 2.0 * mu)) * g - mu) * g + 2.0 * mu) * g - mu;
    let df = |g: f64| {
        (((5.0 * g - 4.0 * (3.0 - mu)) * g + 3.0 * (3.0 - 2.0 * mu)) * g - 2.0 * mu) * g + 2.0 * mu
    };
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    if f(lo) * f(hi) > 0.0 {
        return Err(Error::InvalidInput("no collinear root bracketed".into()));
    }
    let mut g = (mu / 3.0).cbrt().min(0.9);
    for _ in 0..200 {
        let fg = f(g);
        if fg == 0.0 {
            return Ok(g);
        }
        if f(lo) * fg < 0.0 {
            hi = g;
        } else {
            lo = g;
        }
        let step = fg / df(g);
        let mut next = g - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if (next - g).abs() <= 1e-16 * g.abs().max(1e-300) || hi - lo < 1e-17 {
            return Ok(next);
        }
        g = next;
    }
    Ok(g)
}

impl HamiltonianModel for Rtbp {
    fn dof(&self) -> usize {
        3
    }

    fn hamiltonian(&self, z: &[f64]) -> Result<f64> {
        let pr = self.primaries(z)?;
        let (x1, x2, p1, p2, p3) = (z[0], z[1], z[3], z[4], z[5]);
        Ok(0.5 * (p1 * p1 + p2 * p2 + p3 * p3) - x1 * p2 + x2 * p1 - pr.c1 / pr.r1 - pr.c2 / pr.r2)
    }

    fn gradient(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        let pr = self.primaries(z)?;
        let k1 = pr.c1 / (pr.r1 * pr.r1 * pr.r1);
        let k2 = pr.c2 / (pr.r2 * pr.r2 * pr.r2);
        out[0] = -z[4] + k1 * pr.d1[0] + k2 * pr.d2[0];
        out[1] = z[3] + (k1 + k2) * z[1];
        out[2] = (k1 + k2) * z[2];
        out[3] = z[3] + z[1];
        out[4] = z[4] - z[0];
        out[5] = z[5];
        Ok(())
    }

    fn vector_field(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        let pr = self.primaries(z)?;
        let k1 = pr.c1 / (pr.r1 * pr.r1 * pr.r1);
        let k2 = pr.c2 / (pr.r2 * pr.r2 * pr.r2);
        out[0] = z[3] + z[1];
        out[1] = z[4] - z[0];
        out[2] = z[5];
        out[3] = z[4] - k1 * pr.d1[0] - k2 * pr.d2[0];
        out[4] = -z[3] - (k1 + k2) * z[1];
        out[5] = -(k1 + k2) * z[2];
        Ok(())
    }

    fn jacobian(&self, z: &[f64], out: &mut [f64]) -> Result<()> {
        let pr = self.primaries(z)?;
        out.iter_mut().for_each(|v| *v = 0.0);
        // ẋ rows
        out[1] = 1.0;
        out[3] = 1.0;
        out[6] = -1.0;
        out[6 + 4] = 1.0;
        out[12 + 5] = 1.0;
        // ṗ rows: -Hess(V) plus the Coriolis-like momentum terms
        let hv = potential_hessian(&pr);
        for a in 0..3 {
            for b in 0..3 {
                out[(3 + a) * 6 + b] = -hv[a][b];
            }
        }
        out[3 * 6 + 4] = 1.0;
        out[4 * 6 + 3] = -1.0;
        Ok(())
    }

    fn hessian_action(&self, z: &[f64], u: &[f64], v: &[f64], out: &mut [f64]) -> Result<()> {
        let pr = self.primaries(z)?;
        out[..3].iter_mut().for_each(|o| *o = 0.0);
        let mut t = [0.0; 3];
        for (d, c, r) in [(pr.d1, pr.c1, pr.r1), (pr.d2, pr.c2, pr.r2)] {
            let r2 = r * r;
            let r5 = r2 * r2 * r;
            let r7 = r5 * r2;
            let du = d[0] * u[0] + d[1] * u[1] + d[2] * u[2];
            let dv = d[0] * v[0] + d[1] * v[1] + d[2] * v[2];
            let uv = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
            for a in 0..3 {
                t[a] += c
                    * (-3.0 * (u[a] * dv + v[a] * du + d[a] * uv) / r5 + 15.0 * d[a] * du * dv / r7);
            }
        }
        for a in 0..3 {
            out[3 + a] = -t[a];
        }
        Ok(())
    }
}

fn potential_hessian(pr: &Primaries) -> [[f64; 3]; 3] {
    let mut h = [[0.0; 3]; 3];
    for (d, c, r) in [(pr.d1, pr.c1, pr.r1), (pr.d2, pr.c2, pr.r2)] {
        let r3 = r * r * r;
        let r5 = r3 * r * r;
        for a in 0..3 {
            for b in 0..3 {
                let delta = if a == b { 1.0 } else { 0.0 };
                h[a][b] += c * (delta / r3 - 3.0 * d[a] * d[b] / r5);
            }
        }
    }
    h
}

/// Linearization at a center×center×saddle equilibrium.
///
/// Eigenvalues of `DX_H` are `±i2πω_p`, `±i2πω_v` and `±λ`. The complex
/// eigenvectors are those for `+i2πω`; the vertical pair is the one living
/// in the `(x₃, p₃)` plane.
#[derive(Debug, Clone)]
pub struct LinearSpectrum {
    pub omega_p: f64,
    pub omega_v: f64,
    pub lambda: f64,
    pub unstable: Vec<f64>,
    pub stable: Vec<f64>,
    pub planar: Vec<Complex64>,
    pub vertical: Vec<Complex64>,
}

pub fn linear_spectrum_at(model: &dyn HamiltonianModel, z: &[f64]) -> Result<LinearSpectrum> {
    if model.dof() != 3 {
        return Err(Error::InvalidInput("linear spectrum classification needs n = 3".into()));
    }
    let a = model.jacobian_matrix(z)?;
    let pairs = eigenpairs(&a)?;
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut saddle_u = None;
    let mut saddle_s = None;
    let mut centers = Vec::new();
    for (s, v) in pairs {
        if s.re.abs() > s.im.abs() {
            let real = realify(&v);
            if s.re > 0.0 {
                saddle_u = Some((s.re, real));
            } else {
                saddle_s = Some((s.re, real));
            }
        } else if s.im > 0.0 {
            let vert_weight = v[2].norm_sqr() + v[5].norm_sqr();
            centers.push((s.im / two_pi, vert_weight, v));
        }
    }
    let (lambda, unstable) =
        saddle_u.ok_or_else(|| Error::NoConvergence("no unstable direction found".into()))?;
    let (_, stable) = saddle_s.ok_or_else(|| Error::NoConvergence("no stable direction found".into()))?;
    if centers.len() != 2 {
        return Err(Error::NoConvergence(format!("expected two center pairs, found {}", centers.len())));
    }
    centers.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap_or(std::cmp::Ordering::Equal));
    let (omega_p, _, planar) = centers.remove(0);
    let (omega_v, _, vertical) = centers.remove(0);
    Ok(LinearSpectrum { omega_p, omega_v, lambda, unstable, stable, planar, vertical })
}

/// Rotate a complex eigenvector of a real eigenvalue to real and normalize.
fn realify(v: &[Complex64]) -> Vec<f64> {
    let big = v.iter().cloned().fold(Complex64::new(0.0, 0.0), |acc, c| if c.norm() > acc.norm() { c } else { acc });
    let phase = big.conj() / big.norm();
    let r: Vec<f64> = v.iter().map(|c| (c * phase).re).collect();
    let norm = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    r.iter().map(|x| x / norm).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_jacobian(m: &Rtbp, z: &[f64]) -> Vec<f64> {
        let h = 1e-6;
        let mut out = vec![0.0; 36];
        for j in 0..6 {
            let mut zp = z.to_vec();
            let mut zm = z.to_vec();
            zp[j] += h;
            zm[j] -= h;
            let fp = m.vector_field_vec(&zp).unwrap();
            let fm = m.vector_field_vec(&zm).unwrap();
            for i in 0..6 {
                out[i * 6 + j] = (fp[i] - fm[i]) / (2.0 * h);
            }
        }
        out
    }

    const Z: [f64; 6] = [-0.8, 0.05, 0.03, -0.02, -0.75, 0.04];

    #[test]
    fn vector_field_matches_gradient_rotation() {
        let m = Rtbp::earth_moon();
        let mut g = [0.0; 6];
        m.gradient(&Z, &mut g).unwrap();
        let x = m.vector_field_vec(&Z).unwrap();
        for i in 0..3 {
            assert!((x[i] - g[3 + i]).abs() < 1e-15);
            assert!((x[3 + i] + g[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let m = Rtbp::earth_moon();
        let mut g = [0.0; 6];
        m.gradient(&Z, &mut g).unwrap();
        for j in 0..6 {
            let h = 1e-6;
            let mut zp = Z;
            let mut zm = Z;
            zp[j] += h;
            zm[j] -= h;
            let fd = (m.hamiltonian(&zp).unwrap() - m.hamiltonian(&zm).unwrap()) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-8, "component {j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = Rtbp::earth_moon();
        let mut j = vec![0.0; 36];
        m.jacobian(&Z, &mut j).unwrap();
        let fd = fd_jacobian(&m, &Z);
        for k in 0..36 {
            assert!((j[k] - fd[k]).abs() < 1e-7, "entry {k}");
        }
    }

    #[test]
    fn hessian_action_matches_jacobian_differences() {
        let m = Rtbp::earth_moon();
        let u = [0.3, -0.2, 0.5, 0.1, 0.7, -0.4];
        let v = [-0.6, 0.25, 0.15, 0.9, -0.3, 0.2];
        let mut out = [0.0; 6];
        m.hessian_action(&Z, &u, &v, &mut out).unwrap();
        let h = 1e-6;
        let zp: Vec<f64> = Z.iter().zip(v.iter()).map(|(a, b)| a + h * b).collect();
        let zm: Vec<f64> = Z.iter().zip(v.iter()).map(|(a, b)| a - h * b).collect();
        let jp = m.jacobian_matrix(&zp).unwrap();
        let jm = m.jacobian_matrix(&zm).unwrap();
        let uu = nalgebra::DVector::from_row_slice(&u);
        let fd = (jp * &uu - jm * &uu) / (2.0 * h);
        for i in 0..6 {
            assert!((fd[i] - out[i]).abs() < 1e-7, "row {i}: {} vs {}", fd[i], out[i]);
        }
    }

    #[test]
    fn jacobian_is_hamiltonian() {
        let m = Rtbp::earth_moon();
        let a = m.jacobian_matrix(&Z).unwrap();
        let o = omega0(3);
        let s = &o * &a;
        assert!((&s - s.transpose()).amax() < 1e-14);
    }

    #[test]
    fn collision_is_reported() {
        let m = Rtbp::earth_moon();
        let z = [m.mu - 1.0 + 1e-6, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!(matches!(m.hamiltonian(&z), Err(Error::Collision { .. })));
    }

    #[test]
    fn action_form_generates_omega() {
        let s = SymplecticStructure::standard(3);
        let da = s.action_jacobian(&Z);
        assert!(((da.transpose() - &da) - s.omega(&Z)).amax() < 1e-15);
        let g = -s.omega(&Z) * s.complex_structure(&Z);
        assert!((g - s.metric(&Z)).amax() < 1e-15);
    }
}
