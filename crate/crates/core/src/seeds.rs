//! Starting data: Lyapunov periodic orbits around the inner collinear
//! point, Floquet data, torus seeds, and conversion of Poincaré-section
//! tori to flow-map tori.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::cohomology::solve_small_divisor;
use crate::flow::{flow, flow_with_jacobian, par_map, FlowConfig};
use crate::linalg::eigenpairs;
use crate::newton::mean_energy;
use crate::symplectic_model::{linear_spectrum_at, HamiltonianModel, Rtbp};
use crate::torus_rep::{CurveMap, PeriodicFunction, TorusState};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PoFamily {
    /// Planar Lyapunov orbits; amplitude is the `x₁` offset at the crossing.
    Planar,
    /// Vertical (figure-eight) Lyapunov orbits; amplitude is `p₃` at the
    /// crossing of the `x₁` axis.
    Vertical,
}

#[derive(Debug, Clone)]
pub struct PeriodicOrbit {
    pub family: PoFamily,
    pub amplitude: f64,
    pub x0: Vec<f64>,
    pub period: f64,
    pub energy: f64,
    pub monodromy: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct FloquetData {
    /// Normal rotation in `[0, 1/2]`.
    pub nu: f64,
    /// Eigenvector for `e^{i2πν}`, unit norm.
    pub elliptic: Vec<Complex64>,
    pub lambda_u: f64,
    pub lambda_s: f64,
    pub unstable: Vec<f64>,
    pub stable: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub enum PoTarget {
    Amplitude(f64),
    Energy(f64),
    Rotation(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct PoConfig {
    pub tol: f64,
    pub max_iters: usize,
    pub flow: FlowConfig,
}

impl Default for PoConfig {
    fn default() -> Self {
        Self { tol: 1e-12, max_iters: 30, flow: FlowConfig::default() }
    }
}

/// Symmetric differential correction for a fixed amplitude, from an initial
/// guess `(x0, half period)`.
fn correct_symmetric(
    model: &Rtbp,
    family: PoFamily,
    mut x0: Vec<f64>,
    mut half: f64,
    cfg: &PoConfig,
) -> Result<(Vec<f64>, f64)> {
    // Free initial components and conditions at the half period.
    let (free, cond): (&[usize], &[usize]) = match family {
        PoFamily::Vertical => (&[0, 4], &[1, 2, 3]),
        PoFamily::Planar => (&[4], &[1, 3]),
    };
    let nu = free.len() + 1;
    for _ in 0..cfg.max_iters {
        let fj = flow_with_jacobian(model, &x0, half, &cfg.flow)?;
        let g = DVector::from_iterator(cond.len(), cond.iter().map(|&c| fj.end[c]));
        if g.amax() < cfg.tol {
            return Ok((x0, half));
        }
        let xe = model.vector_field_vec(&fj.end)?;
        let mut a = DMatrix::zeros(cond.len(), nu);
        for (r, &c) in cond.iter().enumerate() {
            for (q, &f) in free.iter().enumerate() {
                a[(r, q)] = fj.jac[(c, f)];
            }
            a[(r, nu - 1)] = xe[c];
        }
        let dx = crate::linalg::solve(&a, &(-g), "periodic orbit correction")?;
        for (q, &f) in free.iter().enumerate() {
            x0[f] += dx[q];
        }
        half += dx[nu - 1];
        if !half.is_finite() || half <= 0.0 {
            return Err(Error::NoConvergence("periodic orbit half period lost".into()));
        }
    }
    Err(Error::NoConvergence("symmetric periodic orbit correction".into()))
}

fn linear_guess(model: &Rtbp, family: PoFamily, amplitude: f64) -> Result<(Vec<f64>, f64)> {
    let l1 = model.l1()?;
    let spec = linear_spectrum_at(model, &l1)?;
    let mut x0 = l1.to_vec();
    match family {
        PoFamily::Vertical => {
            x0[5] = amplitude;
            Ok((x0, 0.5 / spec.omega_v))
        }
        PoFamily::Planar => {
            let v = &spec.planar;
            let phase = v[0].conj() / v[0].norm();
            let re: Vec<f64> = v.iter().map(|c| (c * phase).re).collect();
            for (x, r) in x0.iter_mut().zip(&re) {
                *x += amplitude * r / re[0];
            }
            x0[1] = 0.0;
            x0[3] = 0.0;
            Ok((x0, 0.5 / spec.omega_p))
        }
    }
}

fn finish_orbit(model: &Rtbp, family: PoFamily, amplitude: f64, x0: Vec<f64>, half: f64, cfg: &PoConfig) -> Result<PeriodicOrbit> {
    let period = 2.0 * half;
    let fj = flow_with_jacobian(model, &x0, period, &cfg.flow)?;
    let energy = model.hamiltonian(&x0)?;
    Ok(PeriodicOrbit { family, amplitude, x0, period, energy, monodromy: fj.jac })
}

/// Lyapunov orbit of the given amplitude, continued from small amplitude.
pub fn lyapunov_po(model: &Rtbp, family: PoFamily, amplitude: f64, cfg: &PoConfig) -> Result<PeriodicOrbit> {
    let start = amplitude.abs().min(1e-3).copysign(amplitude);
    let (mut x0, mut half) = linear_guess(model, family, start)?;
    let l1 = model.l1()?;
    let planar_ratio = (x0[4] - l1[4]) / (x0[0] - l1[0]);
    let mut a = start;
    loop {
        let (x, h) = correct_symmetric(model, family, x0, half, cfg)?;
        x0 = x;
        half = h;
        if a == amplitude {
            break;
        }
        let next = if (amplitude / a).abs() > 1.5 { a * 1.5 } else { amplitude };
        match family {
            PoFamily::Vertical => x0[5] = next,
            PoFamily::Planar => {
                x0[0] += next - a;
                x0[4] += planar_ratio * (next - a);
            }
        }
        a = next;
    }
    finish_orbit(model, family, amplitude, x0, half, cfg)
}

/// Floquet data of a Lyapunov orbit with one elliptic and one saddle pair.
pub fn floquet(po: &PeriodicOrbit) -> Result<FloquetData> {
    let pairs = eigenpairs(&po.monodromy)?;
    let mut elliptic = None;
    let mut saddle_u = None;
    let mut saddle_s = None;
    for (s, v) in pairs {
        if (s - 1.0).norm() < 1e-4 {
            continue;
        }
        if (s.norm() - 1.0).abs() < 1e-6 && s.im > 0.0 {
            elliptic = Some((s.arg() / (2.0 * PI), v));
        } else if s.im.abs() < 1e-8 && s.norm() > 1.0 + 1e-6 {
            saddle_u = Some((s.re, realify(&v)));
        } else if s.im.abs() < 1e-8 && s.norm() < 1.0 - 1e-6 {
            saddle_s = Some((s.re, realify(&v)));
        }
    }
    let (nu, el) = elliptic.ok_or_else(|| Error::NoConvergence("no elliptic Floquet pair".into()))?;
    let (lu, vu) = saddle_u.ok_or_else(|| Error::NoConvergence("no unstable Floquet multiplier".into()))?;
    let (ls, vs) = saddle_s.ok_or_else(|| Error::NoConvergence("no stable Floquet multiplier".into()))?;
    let norm = el.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    Ok(FloquetData {
        nu,
        elliptic: el.iter().map(|c| c / norm).collect(),
        lambda_u: lu,
        lambda_s: ls,
        unstable: vu,
        stable: vs,
    })
}

fn realify(v: &[Complex64]) -> Vec<f64> {
    let big = v.iter().cloned().fold(Complex64::new(0.0, 0.0), |a, c| if c.norm() > a.norm() { c } else { a });
    let phase = big.conj() / big.norm();
    let r: Vec<f64> = v.iter().map(|c| (c * phase).re).collect();
    let n = r.iter().map(|x| x * x).sum::<f64>().sqrt();
    r.iter().map(|x| x / n).collect()
}

fn orbit_property(po: &PeriodicOrbit, target: &PoTarget) -> Result<f64> {
    Ok(match target {
        PoTarget::Amplitude(_) => po.amplitude,
        PoTarget::Energy(_) => po.energy,
        PoTarget::Rotation(_) => floquet(po)?.nu,
    })
}

/// Lyapunov orbit with a prescribed amplitude, energy or normal rotation.
///
/// Amplitude is increased geometrically until the target is bracketed,
/// then located by the Illinois variant of regula falsi.
pub fn lyapunov_po_target(model: &Rtbp, family: PoFamily, target: PoTarget, cfg: &PoConfig) -> Result<PeriodicOrbit> {
    let goal = match target {
        PoTarget::Amplitude(a) => return lyapunov_po(model, family, a, cfg),
        PoTarget::Energy(h) => h,
        PoTarget::Rotation(nu) => nu,
    };
    let sign = if family == PoFamily::Planar { -1.0 } else { 1.0 };
    let mut a0 = 1e-3 * sign;
    let po0 = lyapunov_po(model, family, a0, cfg)?;
    let mut f0 = orbit_property(&po0, &target)? - goal;
    let mut a1 = a0;
    let mut po1 = po0;
    let mut f1 = f0;
    for _ in 0..60 {
        a1 = a0 * 1.4;
        po1 = lyapunov_po(model, family, a1, cfg)?;
        f1 = orbit_property(&po1, &target)? - goal;
        if f0 * f1 <= 0.0 {
            break;
        }
        a0 = a1;
        f0 = f1;
    }
    if f0 * f1 > 0.0 {
        return Err(Error::NoConvergence("target not bracketed along the Lyapunov family".into()));
    }
    let mut side = 0;
    for _ in 0..100 {
        if f1.abs() < 1e-13 || (a1 - a0).abs() < 1e-15 {
            return Ok(po1);
        }
        let a = (a0 * f1 - a1 * f0) / (f1 - f0);
        let po = lyapunov_po(model, family, a, cfg)?;
        let f = orbit_property(&po, &target)? - goal;
        if f * f1 < 0.0 {
            a0 = a1;
            f0 = f1;
            side = 0;
        } else {
            if side == 1 {
                f0 *= 0.5;
            }
            side = 1;
        }
        a1 = a;
        f1 = f;
        po1 = po;
    }
    Ok(po1)
}

pub use crate::observables::Generator;

/// Linear torus seed around a periodic orbit.
///
/// With `t_i = iT/m`, `K_i(θ) = x(t_i) + s Re(e^{i2πθ} u_i)` where
/// `u_i = e^{-i2πν t_i/T} Dφ_{t_i} u` is the transported, detwisted
/// elliptic eigenvector. The bundle is the stable Floquet direction:
/// `W_i = λ^{-i} Dφ_{t_i} w` with `λ^m = Λ_s`, so `λ ∈ (0, 1)`.
pub fn seed_from_po(
    model: &dyn HamiltonianModel,
    po: &PeriodicOrbit,
    m: usize,
    grid: usize,
    amplitude: f64,
    cfg: &FlowConfig,
) -> Result<TorusState> {
    if m == 0 {
        return Err(Error::InvalidInput("need at least one leg".into()));
    }
    let fl = floquet(po)?;
    let lam = if fl.lambda_s > 0.0 {
        fl.lambda_s.powf(1.0 / m as f64)
    } else if m % 2 == 1 {
        -(-fl.lambda_s).powf(1.0 / m as f64)
    } else {
        return Err(Error::NotHyperbolic { lam: fl.lambda_s, mu: 1.0 });
    };
    let d = po.x0.len();
    let mut z = po.x0.clone();
    let mut phi = DMatrix::<f64>::identity(d, d);
    let uc = DVector::from_vec(fl.elliptic.clone());
    let w0 = DVector::from_vec(fl.stable.clone());
    let mut k = Vec::with_capacity(m);
    let mut w = Vec::with_capacity(m);
    let dt = po.period / m as f64;
    for i in 0..m {
        if i > 0 {
            let fj = flow_with_jacobian(model, &z, dt, cfg)?;
            z = fj.end;
            phi = fj.jac * phi;
        }
        let twist = Complex64::from_polar(1.0, -2.0 * PI * fl.nu * i as f64 / m as f64);
        let phic: DMatrix<Complex64> = phi.map(|x| Complex64::new(x, 0.0));
        let ui = (phic * &uc) * twist;
        let pts: Vec<Vec<f64>> = (0..grid)
            .map(|j| {
                let e = Complex64::from_polar(1.0, 2.0 * PI * j as f64 / grid as f64);
                (0..d).map(|c| z[c] + amplitude * (e * ui[c]).re).collect()
            })
            .collect();
        k.push(CurveMap::from_points(&pts)?);
        let wi = (&phi * &w0) / lam.powi(i as i32);
        w.push(CurveMap::constant(grid, wi.as_slice())?);
    }
    let energy = mean_energy(model, &k[0])?;
    Ok(TorusState { k, w, period: po.period, omega: fl.nu, lambda: lam, energy })
}

/// Result of converting a Poincaré-section torus.
#[derive(Debug, Clone)]
pub struct FlowMapTorus {
    pub curve: CurveMap,
    pub period: f64,
    pub tau: PeriodicFunction,
}

/// Convert `(K_P, T_P)` with `φ_{T_P(θ)}(K_P(θ)) = K_P(θ+ω)` into a curve
/// of the time-`T` map: `T = ⟨T_P⟩`, `τ` solves
/// `τ(θ) - τ(θ+ω) = T_P(θ) - T` with `⟨τ⟩ = 0`, and `K = φ_τ(K_P)`.
pub fn poincare_to_flowmap(
    model: &dyn HamiltonianModel,
    kp: &CurveMap,
    tp: &PeriodicFunction,
    omega: f64,
    cfg: &FlowConfig,
    divisor_floor: f64,
) -> Result<FlowMapTorus> {
    if kp.grid_size() != tp.len() {
        return Err(Error::InvalidInput("section curve and return time on different grids".into()));
    }
    // A constant return time is taken verbatim so that `τ` is exactly zero.
    let s = tp.samples();
    let period = if s.iter().all(|&v| v == s[0]) { s[0] } else { tp.mean() };
    let shifted = PeriodicFunction::from_samples(s.iter().map(|v| v - period).collect())?;
    let (tau, _) = solve_small_divisor(&shifted, omega, divisor_floor)?;
    let items: Vec<(Vec<f64>, f64)> = kp.points().into_iter().zip(tau.samples().iter().cloned()).collect();
    let pts = par_map(&items, |(z, t)| flow(model, z, *t, cfg))?;
    Ok(FlowMapTorus { curve: CurveMap::from_points(&pts)?, period, tau })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil;

    #[test]
    fn vertical_orbit_closes_with_target_rotation() {
        let m = Rtbp::earth_moon();
        let po = testutil::vertical_po();
        let end = flow(&m, &po.x0, po.period, &FlowConfig::default()).unwrap();
        let gap = end.iter().zip(&po.x0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(gap < 1e-9, "{gap}");
        let fl = floquet(po).unwrap();
        assert!((fl.nu - testutil::RHO).abs() < 1e-9, "{}", fl.nu);
        assert!((fl.lambda_u * fl.lambda_s - 1.0).abs() < 1e-6);
    }

    #[test]
    fn seed_has_contracting_bundle() {
        let st = testutil::seed();
        let fl = floquet(testutil::vertical_po()).unwrap();
        assert!(st.lambda > 0.0 && st.lambda < 1.0);
        assert!((st.lambda.powi(4) - fl.lambda_s.abs()).abs() < 1e-10 * fl.lambda_s.abs().max(1e-300) + 1e-14);
        assert_eq!(st.legs(), 4);
        assert_eq!(st.grid_size(), 32);
        assert!((st.omega - testutil::RHO).abs() < 1e-9);
    }

    #[test]
    fn constant_return_time_is_taken_verbatim() {
        let m = Rtbp::earth_moon();
        let st = testutil::converged();
        let tp = PeriodicFunction::constant(st.grid_size(), st.period).unwrap();
        let fm = poincare_to_flowmap(&m, &st.k[0], &tp, st.omega, &FlowConfig::default(), 1e-8).unwrap();
        assert_eq!(fm.period, st.period);
        assert!(fm.tau.samples().iter().all(|&t| t == 0.0));
        assert_eq!(fm.curve.points(), st.k[0].points());
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let m = Rtbp::earth_moon();
        let st = testutil::converged();
        let tp = PeriodicFunction::constant(16, st.period).unwrap();
        assert!(poincare_to_flowmap(&m, &st.k[0], &tp, st.omega, &FlowConfig::default(), 1e-8).is_err());
    }
}
