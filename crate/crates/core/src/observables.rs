//! Calabi invariants, multipliers, bundle distances, natural frequencies and
//! the globalized 2D torus.

use nalgebra::{DMatrix, DVector};

use crate::flow::{flow, flow_with_columns, par_map, FlowConfig};
use crate::frame::{build_frame, AdaptedFrame, FrameOptions, LegFlows};
use crate::symplectic_model::HamiltonianModel;
use crate::torus_rep::{CurveMap, TorusState};
use crate::{Error, Result};

/// Which generator of the 2D torus the curve `K_0` is.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Generator {
    Vertical,
    Planar,
}

impl Generator {
    pub fn name(self) -> &'static str {
        match self {
            Generator::Vertical => "vertical",
            Generator::Planar => "planar",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vertical" | "v" => Ok(Generator::Vertical),
            "planar" | "p" => Ok(Generator::Planar),
            _ => Err(Error::InvalidInput(format!("unknown generator '{s}'"))),
        }
    }
}

/// Calabi invariant `⟨a(K)ᵀK'⟩` of a closed curve, as a grid mean.
pub fn calabi(model: &dyn HamiltonianModel, k: &CurveMap) -> f64 {
    let st = model.structure();
    let kd = k.derivative();
    let pts = k.points();
    let mut s = 0.0;
    for (j, p) in pts.iter().enumerate() {
        s += dot(&st.action(p), &kd.point(j));
    }
    s / pts.len() as f64
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Leg index and local time for the second angle `θ₂ ∈ [0, 1)`.
fn leg_of(theta2: f64, m: usize) -> (usize, f64) {
    let t = theta2.rem_euclid(1.0);
    let j = ((m as f64 * t).floor() as usize).min(m - 1);
    (j, t - j as f64 / m as f64)
}

/// Calabi invariant of `G(θ) = φ_{Tθ}(K_0(-θω))`, evaluated leg by leg as
/// `φ_{(θ-j/m)T}(K_j(-θω + jω/m))` with `G' = T X_H(G) - ω Dφ K_j'`, by the
/// trapezoidal rule on `samples` points.
pub fn flowed_calabi(model: &dyn HamiltonianModel, state: &TorusState, samples: usize, cfg: &FlowConfig) -> Result<f64> {
    if samples == 0 {
        return Err(Error::InvalidInput("flowed Calabi needs at least one sample".into()));
    }
    let m = state.legs();
    let st = model.structure();
    let derivs: Vec<CurveMap> = state.k.iter().map(|k| k.derivative()).collect();
    let thetas: Vec<f64> = (0..samples).map(|s| s as f64 / samples as f64).collect();
    let terms = par_map(&thetas, |&th| {
        let (j, local) = leg_of(th, m);
        let phase = -th * state.omega + j as f64 * state.omega / m as f64;
        let z = state.k[j].eval(phase);
        let kd = DMatrix::from_column_slice(z.len(), 1, &derivs[j].eval(phase));
        let fj = flow_with_columns(model, &z, &kd, local * state.period, cfg)?;
        let x = model.vector_field_vec(&fj.end)?;
        let gd: Vec<f64> = (0..z.len()).map(|c| state.period * x[c] - state.omega * fj.jac[(c, 0)]).collect();
        Ok(dot(&st.action(&fj.end), &gd))
    })?;
    Ok(terms.iter().sum::<f64>() / samples as f64)
}

/// `(C₁(K̂), C₂(K̂))` for the natural-frequency parameterization of the torus.
pub fn calabi_2d(
    model: &dyn HamiltonianModel,
    state: &TorusState,
    generator: Generator,
    samples: usize,
    cfg: &FlowConfig,
) -> Result<[f64; 2]> {
    let c = calabi(model, &state.k[0]);
    let g = flowed_calabi(model, state, samples, cfg)?;
    Ok(match generator {
        Generator::Vertical => [c, g - c],
        Generator::Planar => [c + g, -c],
    })
}

/// `sqrt(|C|/π)`.
pub fn radius(c: f64) -> f64 {
    (c.abs() / std::f64::consts::PI).sqrt()
}

/// Length of the component of the unit vector along `v` orthogonal to the
/// span of the columns of `basis`.
pub fn line_subspace_distance(v: &DVector<f64>, basis: &DMatrix<f64>) -> Result<f64> {
    let nv = v.norm();
    if nv == 0.0 || !nv.is_finite() {
        return Err(Error::DegenerateFrame("zero vector in bundle distance".into()));
    }
    let u = v / nv;
    let qr = basis.clone().qr();
    let r = qr.r();
    let scale = r.diagonal().iter().fold(0.0_f64, |a, x| a.max(x.abs()));
    if r.diagonal().iter().any(|x| x.abs() <= 1e-13 * scale) || scale == 0.0 {
        return Err(Error::DegenerateFrame("rank loss in subspace basis".into()));
    }
    let q = qr.q();
    let proj = &q * (q.transpose() * &u);
    Ok((u - proj).norm().min(1.0))
}

/// Minimum over legs and grid points of the four distances
/// `d(TK, X)`, `d(E^s, E^u)`, `d(E^s, E^c)`, `d(E^u, E^c)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleDistances {
    pub tangent_field: f64,
    pub stable_unstable: f64,
    pub stable_center: f64,
    pub unstable_center: f64,
}

/// Bundles are frame columns: `K'` (0), `X_H` (1), `W^s` (n-1), `W^u` (2n-1),
/// and the center bundle is spanned by the remaining columns.
pub fn bundle_distances(frame: &AdaptedFrame) -> Result<BundleDistances> {
    let n = frame.n;
    let ws = n - 1;
    let wu = 2 * n - 1;
    let center: Vec<usize> = (0..2 * n).filter(|&c| c != ws && c != wu).collect();
    let mut out = BundleDistances {
        tangent_field: f64::INFINITY,
        stable_unstable: f64::INFINITY,
        stable_center: f64::INFINITY,
        unstable_center: f64::INFINITY,
    };
    for leg in &frame.p {
        for p in leg {
            let col = |c: usize| p.column(c).into_owned();
            let span = |cs: &[usize]| DMatrix::from_columns(&cs.iter().map(|&c| p.column(c)).collect::<Vec<_>>());
            out.tangent_field = out.tangent_field.min(line_subspace_distance(&col(0), &span(&[1]))?);
            out.stable_unstable = out.stable_unstable.min(line_subspace_distance(&col(ws), &span(&[wu]))?);
            out.stable_center = out.stable_center.min(line_subspace_distance(&col(ws), &span(&center))?);
            out.unstable_center = out.unstable_center.min(line_subspace_distance(&col(wu), &span(&center))?);
        }
    }
    Ok(out)
}

/// Frequencies `(ω_p, ω_v)` of the torus and the rotation numbers
/// `ν_p = 1 - ω_v/ω_p`, `ν_v = ω_p/ω_v - 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NaturalFrequencies {
    pub omega_p: f64,
    pub omega_v: f64,
    pub nu_p: f64,
    pub nu_v: f64,
}

pub fn natural_frequencies(period: f64, omega: f64, generator: Generator) -> NaturalFrequencies {
    let (omega_p, omega_v) = match generator {
        Generator::Vertical => {
            let wv = 1.0 / period;
            (wv * (1.0 + omega), wv)
        }
        Generator::Planar => {
            let wp = 1.0 / period;
            (wp, wp * (1.0 - omega))
        }
    };
    NaturalFrequencies { omega_p, omega_v, nu_p: 1.0 - omega_v / omega_p, nu_v: omega_p / omega_v - 1.0 }
}

/// Sampled 2D torus `K̂(θ₁, θ₂) = φ_{(θ₂-j/m)T}(K_j(θ₁-(θ₂-j/m)ω))`,
/// `j = ⌊mθ₂⌋`, on an `n1 × n2` grid, with the generators `K̂(·, 0)` and
/// `K̂(0, ·)`.
#[derive(Debug, Clone)]
pub struct Surface {
    pub n1: usize,
    pub n2: usize,
    /// `points[i2][i1]`, full phase-space points.
    pub points: Vec<Vec<Vec<f64>>>,
    pub curve: Vec<Vec<f64>>,
    pub transversal: Vec<Vec<f64>>,
}

pub fn globalize_surface(
    model: &dyn HamiltonianModel,
    state: &TorusState,
    n1: usize,
    n2: usize,
    cfg: &FlowConfig,
) -> Result<Surface> {
    if n1 == 0 || n2 == 0 {
        return Err(Error::InvalidInput("surface grid must be nonempty".into()));
    }
    let m = state.legs();
    let columns: Vec<usize> = (0..n2).collect();
    let points = par_map(&columns, |&i2| {
        let th2 = i2 as f64 / n2 as f64;
        let (j, local) = leg_of(th2, m);
        (0..n1)
            .map(|i1| {
                let th1 = i1 as f64 / n1 as f64;
                flow(model, &state.k[j].eval(th1 - local * state.omega), local * state.period, cfg)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let curve = points[0].clone();
    let transversal = points.iter().map(|row| row[0].clone()).collect();
    Ok(Surface { n1, n2, points, curve, transversal })
}

/// Evaluate `K̂` at a single point.
pub fn surface_point(model: &dyn HamiltonianModel, state: &TorusState, th1: f64, th2: f64, cfg: &FlowConfig) -> Result<Vec<f64>> {
    let (j, local) = leg_of(th2, state.legs());
    flow(model, &state.k[j].eval(th1 - local * state.omega), local * state.period, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObservableOptions {
    pub generator: Generator,
    /// Samples of the second-angle quadrature.
    pub flow_samples: usize,
    pub flow: FlowConfig,
    pub frame: FrameOptions,
}

impl Default for ObservableOptions {
    fn default() -> Self {
        Self {
            generator: Generator::Vertical,
            flow_samples: 256,
            flow: FlowConfig::default(),
            frame: FrameOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservableRecord {
    pub period: f64,
    pub omega: f64,
    pub energy: f64,
    /// `Λ^u = λ^{-m}`.
    pub unstable_multiplier: f64,
    /// `χ = log|Λ^u| / T`.
    pub exponent: f64,
    pub calabi: [f64; 2],
    pub radii: [f64; 2],
    pub distances: BundleDistances,
    pub frequencies: NaturalFrequencies,
    pub grid: usize,
    pub legs: usize,
}

impl ObservableRecord {
    pub fn compute(
        model: &dyn HamiltonianModel,
        state: &TorusState,
        flows: &LegFlows,
        opts: &ObservableOptions,
    ) -> Result<Self> {
        let m = state.legs();
        let frame = build_frame(model, state, flows, &opts.frame)?;
        let distances = bundle_distances(&frame)?;
        let cal = calabi_2d(model, state, opts.generator, opts.flow_samples, &opts.flow)?;
        let lu = state.lambda.powi(-(m as i32));
        Ok(Self {
            period: state.period,
            omega: state.omega,
            energy: state.energy,
            unstable_multiplier: lu,
            exponent: lu.abs().ln() / state.period,
            calabi: cal,
            radii: [radius(cal[0]), radius(cal[1])],
            distances,
            frequencies: natural_frequencies(state.period, state.omega, opts.generator),
            grid: state.grid_size(),
            legs: m,
        })
    }
}
