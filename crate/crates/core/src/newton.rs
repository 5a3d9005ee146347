//! Newton steps for the torus and its bundle, and the refinement loop.
//!
//! Both steps write the correction in frame coordinates, `ΔK_i = P_i ξ_i`,
//! where the linearized invariance equation becomes block triangular and
//! reduces to the cohomological equations of [`crate::cohomology`].

use nalgebra::{DMatrix, DVector};

use crate::cohomology::{solve_multiple_non_small_divisor, solve_multiple_small_divisor, DEFAULT_DIVISOR_FLOOR};
use crate::flow::FlowConfig;
use crate::observables::calabi;
use crate::frame::{build_frame, integrate_legs, reduction_residual, AdaptedFrame, FrameOptions, LegFlows};
use crate::linalg::condition_number;
use crate::symplectic_model::HamiltonianModel;
use crate::torus_rep::{tail_cutoff, CurveMap, PeriodicFunction, TorusState, DEFAULT_TAIL_DIVISOR};
use crate::{Error, Result};

/// Which scalar the torus correction keeps fixed besides `ω`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// `T` fixed, energy free.
    Isochronous,
    /// Energy fixed at the target, `T` free.
    Isoenergetic,
    /// Calabi invariant of `K_0` fixed at the target, `T` and energy free.
    FixedCalabi,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonConfig {
    pub eps: f64,
    pub eps_w: f64,
    pub max_iters: usize,
    pub divisor_floor: f64,
    pub twist_cond_max: f64,
    pub tail_divisor: usize,
    /// Refuse `|λ| ∈ [1-δ, 1+δ]`.
    pub hyperbolicity_delta: f64,
    pub frame: FrameOptions,
    pub flow: FlowConfig,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            eps: 1e-7,
            eps_w: 1e-5,
            max_iters: 10,
            divisor_floor: DEFAULT_DIVISOR_FLOOR,
            twist_cond_max: 1e12,
            tail_divisor: DEFAULT_TAIL_DIVISOR,
            hyperbolicity_delta: 0.5,
            frame: FrameOptions::default(),
            flow: FlowConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NewtonReport {
    pub err_before: f64,
    /// `⟨H(K_0)⟩ - h`, or `C(K_0) - C` for a fixed Calabi invariant, before
    /// the step. Zero in isochronous mode.
    pub constraint_error: f64,
    pub delta_tau: f64,
    /// Removed mean `⟨η³⟩`, quadratically small near a torus.
    pub eta3_mean: Vec<f64>,
    /// Removed mean of the `ξ¹` right-hand side; should vanish.
    pub eta1_residual_mean: Vec<f64>,
    pub twist_cond: f64,
    pub reduction_residual: f64,
}

#[derive(Debug, Clone)]
pub struct BundleReport {
    pub err_before: f64,
    pub delta_lambda: f64,
}

#[derive(Debug, Clone)]
pub struct RefineOutcome {
    pub state: TorusState,
    pub iterations: usize,
    /// `(err, err_W)` at the start of each iteration and at exit.
    pub history: Vec<(f64, f64)>,
    pub err: f64,
    pub err_w: f64,
    pub reports: Vec<NewtonReport>,
    pub flows: LegFlows,
}

pub fn check_hyperbolic(lambda: f64, delta: f64) -> Result<()> {
    if !lambda.is_finite() || (lambda.abs() >= 1.0 - delta && lambda.abs() <= 1.0 + delta) {
        return Err(Error::NotHyperbolic { lam: lambda.abs(), mu: 1.0 });
    }
    Ok(())
}

/// Mean energy over the first leg.
pub fn mean_energy(model: &dyn HamiltonianModel, k0: &CurveMap) -> Result<f64> {
    let pts = k0.points();
    let mut s = 0.0;
    for p in &pts {
        s += model.hamiltonian(p)?;
    }
    Ok(s / pts.len() as f64)
}

/// Leg average `(1/m) Σ_i ⟨η³_i⟩` of the frame-free expressions
/// `η³¹_i = -K'_{i+1}ᵀ Ω E_i` and `η³²_i = -X_Hᵀ Ω E_i`, both evaluated at
/// `K_{i+1}(θ+ω/m)`. Quadratically small in the invariance error.
pub fn eta3_average(model: &dyn HamiltonianModel, state: &TorusState, flows: &LegFlows) -> Result<[f64; 2]> {
    let m = state.legs();
    let shift = state.omega / m as f64;
    let e = flows.torus_error_fields(state);
    let st = model.structure();
    let mut acc = [0.0; 2];
    for i in 0..m {
        let next = &state.k[(i + 1) % m];
        let pts = next.rotate(shift).points();
        let der = next.derivative().rotate(shift).points();
        for (j, ej) in e[i].iter().enumerate() {
            let oe = st.omega(&pts[j]) * DVector::from_column_slice(ej);
            let x = model.vector_field_vec(&pts[j])?;
            acc[0] -= der[j].iter().zip(oe.iter()).map(|(a, b)| a * b).sum::<f64>();
            acc[1] -= x.iter().zip(oe.iter()).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    let scale = (m * state.grid_size()) as f64;
    Ok([acc[0] / scale, acc[1] / scale])
}

/// Band-limited random perturbation `K_i ← K_i + δ R_i` with unit-sup
/// random curves `R_i` of wavenumbers `1..=modes` plus a mean.
pub fn perturb_torus(state: &TorusState, delta: f64, modes: usize, seed: u64) -> Result<TorusState> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let n = state.grid_size();
    let d = state.dim();
    let mut k = Vec::with_capacity(state.legs());
    for leg in &state.k {
        let coeffs: Vec<Vec<(f64, f64)>> = (0..d)
            .map(|_| (0..=modes).map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect())
            .collect();
        let pts: Vec<Vec<f64>> = (0..n)
            .map(|j| {
                let t = 2.0 * std::f64::consts::PI * j as f64 / n as f64;
                coeffs
                    .iter()
                    .map(|cs| {
                        let v: f64 = cs.iter().enumerate().map(|(q, (a, b))| a * (q as f64 * t).cos() + b * (q as f64 * t).sin()).sum();
                        delta * v / (2.0 * (modes + 1) as f64)
                    })
                    .collect()
            })
            .collect();
        k.push(leg.add_points(&pts)?);
    }
    Ok(TorusState { k, ..state.clone() })
}

/// `|⟨η³⟩|` (max norm over both components) for each perturbation size.
pub fn eta3_scaling(
    model: &dyn HamiltonianModel,
    state: &TorusState,
    deltas: &[f64],
    seed: u64,
    cfg: &FlowConfig,
) -> Result<Vec<(f64, f64)>> {
    deltas
        .iter()
        .map(|&d| {
            let p = perturb_torus(state, d, 4, seed)?;
            let fl = integrate_legs(model, &p, cfg)?;
            let a = eta3_average(model, &p, &fl)?;
            Ok((d, a[0].abs().max(a[1].abs())))
        })
        .collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let (lx, ly): (Vec<f64>, Vec<f64>) = points.iter().map(|(x, y)| (x.ln(), y.ln())).unzip();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// `η_i(θ_j) = -P_{i+1}(θ_j+ω/m)⁻¹ E_i(θ_j)` as component functions
/// `[leg][component]`.
pub(crate) fn frame_rhs(frame: &AdaptedFrame, e: &[Vec<Vec<f64>>]) -> Result<Vec<Vec<PeriodicFunction>>> {
    let d = 2 * frame.n;
    let mut out = Vec::with_capacity(frame.m);
    for (i, leg) in e.iter().enumerate() {
        let etas: Vec<DVector<f64>> = leg
            .iter()
            .enumerate()
            .map(|(j, ej)| -(frame.p_next_inv(i, j) * DVector::from_column_slice(ej)))
            .collect();
        out.push(
            (0..d)
                .map(|c| PeriodicFunction::from_samples(etas.iter().map(|v| v[c]).collect()))
                .collect::<Result<Vec<_>>>()?,
        );
    }
    Ok(out)
}

pub(crate) fn column(eta: &[Vec<PeriodicFunction>], c: usize) -> Vec<PeriodicFunction> {
    eta.iter().map(|leg| leg[c].clone()).collect()
}

/// `ΔK_i(θ_j) = P_i(θ_j) ξ_i(θ_j)` from component functions `[leg][component]`.
pub(crate) fn apply_frame(frame: &AdaptedFrame, xi: &[Vec<PeriodicFunction>]) -> Vec<Vec<Vec<f64>>> {
    let d = 2 * frame.n;
    xi.iter()
        .enumerate()
        .map(|(i, comps)| {
            (0..comps[0].len())
                .map(|j| {
                    let v = DVector::from_fn(d, |c, _| comps[c].samples()[j]);
                    (&frame.p[i][j] * v).iter().cloned().collect()
                })
                .collect()
        })
        .collect()
}

/// `S¹_i(θ) v_i(θ)` for leg-wise vector functions `v[leg][component]`.
pub(crate) fn torsion_times(frame: &AdaptedFrame, v: &[Vec<PeriodicFunction>]) -> Result<Vec<Vec<PeriodicFunction>>> {
    let k = frame.n - 1;
    v.iter()
        .enumerate()
        .map(|(i, comps)| {
            let nn = comps[0].len();
            (0..k)
                .map(|a| {
                    PeriodicFunction::from_samples(
                        (0..nn)
                            .map(|j| (0..k).map(|b| frame.s1[i][j][(a, b)] * comps[b].samples()[j]).sum())
                            .collect(),
                    )
                })
                .collect()
        })
        .collect()
}

fn leg_mean(f: &[PeriodicFunction]) -> f64 {
    f.iter().map(|x| x.mean()).sum::<f64>() / f.len() as f64
}

/// Matrix of the twist system: `⟨S¹⟩` in isochronous mode, otherwise
/// `⟨S¹⟩` bordered by the `Δτ` column and the constraint row. The energy
/// change is the mean of `ξ³` along the dual of `X_H`, the Calabi change the
/// mean along the dual of `K'`.
pub fn twist_matrix(frame: &AdaptedFrame, mode: Mode) -> DMatrix<f64> {
    let k = frame.n - 1;
    match mode {
        Mode::Isochronous => frame.s1_mean.clone(),
        Mode::Isoenergetic | Mode::FixedCalabi => {
            let row = if mode == Mode::Isoenergetic { k - 1 } else { 0 };
            let mut a = DMatrix::zeros(k + 1, k + 1);
            a.view_mut((0, 0), (k, k)).copy_from(&frame.s1_mean);
            a[(k - 1, k)] = 1.0;
            a[(k, row)] = 1.0;
            a
        }
    }
}

#[derive(Debug, Clone)]
pub struct TwistReport {
    pub matrix: DMatrix<f64>,
    pub determinant: f64,
    pub condition: f64,
}

pub fn twist_report(frame: &AdaptedFrame, mode: Mode) -> TwistReport {
    let matrix = twist_matrix(frame, mode);
    TwistReport { determinant: matrix.determinant(), condition: condition_number(&matrix), matrix }
}

fn twist_solve(frame: &AdaptedFrame, mode: Mode, rhs1: &DVector<f64>, rhs_h: f64, cond_max: f64) -> Result<(DVector<f64>, f64, f64)> {
    let k = frame.n - 1;
    let a = twist_matrix(frame, mode);
    let cond = condition_number(&a);
    if !(cond <= cond_max) {
        return Err(Error::Twist { cond });
    }
    if mode == Mode::Isochronous {
        let x = crate::linalg::solve(&a, rhs1, "torsion")?;
        return Ok((x, 0.0, cond));
    }
    let mut b = DVector::zeros(k + 1);
    b.rows_mut(0, k).copy_from(rhs1);
    b[k] = rhs_h;
    let x = crate::linalg::solve(&a, &b, "bordered torsion")?;
    Ok((x.rows(0, k).into_owned(), x[k], cond))
}

/// Solution of the torus-type frame system
/// `ξ¹_i + S¹_i ξ³_i - ξ¹_{i+1}(θ+ω/m) = η¹_i - e Δτ`, `ξ³_i - ξ³_{i+1}(θ+ω/m) = η³_i`,
/// `λ ξ² - ξ²₊ = η²`, `λ⁻¹ ξ⁴ - ξ⁴₊ = η⁴`, with the constant part of `ξ³`
/// fixed by the twist system. Returns `ξ[leg][component]`, `Δτ`, the removed
/// means and the twist condition number.
pub(crate) struct TorusSolve {
    pub xi: Vec<Vec<PeriodicFunction>>,
    pub delta_tau: f64,
    pub eta3_mean: Vec<f64>,
    pub eta1_mean: Vec<f64>,
    pub cond: f64,
}

pub(crate) fn torus_solve(
    frame: &AdaptedFrame,
    eta: &[Vec<PeriodicFunction>],
    mode: Mode,
    extra_rhs1: &DVector<f64>,
    rhs_h: f64,
    floor: f64,
    cond_max: f64,
) -> Result<TorusSolve> {
    let n = frame.n;
    let m = frame.m;
    let nn = eta[0][0].len();
    let k = n - 1;
    let omega = frame.omega;
    let lam = frame.lambda;

    let xi2 = solve_multiple_non_small_divisor(&column(eta, n - 1), omega, lam, 1.0, floor)?;
    let xi4 = solve_multiple_non_small_divisor(&column(eta, 2 * n - 1), omega, 1.0 / lam, 1.0, floor)?;
    let mut xi3: Vec<Vec<PeriodicFunction>> = vec![Vec::with_capacity(k); m];
    let mut eta3_mean = Vec::with_capacity(k);
    for a in 0..k {
        let (sol, avg) = solve_multiple_small_divisor(&column(eta, n + a), omega, floor)?;
        eta3_mean.push(avg);
        for (i, s) in sol.into_iter().enumerate() {
            xi3[i].push(s);
        }
    }
    let s_xi3 = torsion_times(frame, &xi3)?;
    let mut rhs1 = extra_rhs1.clone();
    for a in 0..k {
        let r: Vec<PeriodicFunction> =
            (0..m).map(|i| eta[i][a].add(&s_xi3[i][a].scale(-1.0))).collect::<Result<_>>()?;
        rhs1[a] += leg_mean(&r);
    }
    let (xi00, delta_tau, cond) = twist_solve(frame, mode, &rhs1, rhs_h, cond_max)?;
    for leg in xi3.iter_mut() {
        for (a, f) in leg.iter_mut().enumerate() {
            *f = f.add(&PeriodicFunction::constant(nn, xi00[a])?)?;
        }
    }
    let s_xi3 = torsion_times(frame, &xi3)?;
    let mut xi1: Vec<Vec<PeriodicFunction>> = vec![Vec::with_capacity(k); m];
    let mut eta1_mean = Vec::with_capacity(k);
    for a in 0..k {
        let mut shift = extra_rhs1[a];
        if a == k - 1 {
            shift -= delta_tau;
        }
        let r: Vec<PeriodicFunction> = (0..m)
            .map(|i| {
                eta[i][a].add(&s_xi3[i][a].scale(-1.0))?.add(&PeriodicFunction::constant(nn, shift)?)
            })
            .collect::<Result<_>>()?;
        let (sol, avg) = solve_multiple_small_divisor(&r, omega, floor)?;
        eta1_mean.push(avg);
        for (i, s) in sol.into_iter().enumerate() {
            xi1[i].push(s);
        }
    }
    let xi = (0..m)
        .map(|i| {
            let mut v = xi1[i].clone();
            v.push(xi2[i].clone());
            v.extend(xi3[i].iter().cloned());
            v.push(xi4[i].clone());
            v
        })
        .collect();
    Ok(TorusSolve { xi, delta_tau, eta3_mean, eta1_mean, cond })
}

/// Bundle-type frame system: `ξ³ - λξ³₊ = η³`, `λ⁻¹ξ⁴ - λξ⁴₊ = η⁴`,
/// `ξ¹ - λξ¹₊ = η¹ - S¹ξ³`, `Δλ = -⟨η²⟩`, `λ(ξ² - ξ²₊) = η² + Δλ` with
/// `⟨ξ²_0⟩ = 0`.
pub(crate) fn bundle_solve(
    frame: &AdaptedFrame,
    eta: &[Vec<PeriodicFunction>],
    floor: f64,
) -> Result<(Vec<Vec<PeriodicFunction>>, f64)> {
    let n = frame.n;
    let m = frame.m;
    let k = n - 1;
    let omega = frame.omega;
    let lam = frame.lambda;
    let mut xi3: Vec<Vec<PeriodicFunction>> = vec![Vec::with_capacity(k); m];
    for a in 0..k {
        for (i, s) in solve_multiple_non_small_divisor(&column(eta, n + a), omega, 1.0, lam, floor)?
            .into_iter()
            .enumerate()
        {
            xi3[i].push(s);
        }
    }
    let xi4 = solve_multiple_non_small_divisor(&column(eta, 2 * n - 1), omega, 1.0 / lam, lam, floor)?;
    let s_xi3 = torsion_times(frame, &xi3)?;
    let mut xi1: Vec<Vec<PeriodicFunction>> = vec![Vec::with_capacity(k); m];
    for a in 0..k {
        let r: Vec<PeriodicFunction> =
            (0..m).map(|i| eta[i][a].add(&s_xi3[i][a].scale(-1.0))).collect::<Result<_>>()?;
        for (i, s) in solve_multiple_non_small_divisor(&r, omega, 1.0, lam, floor)?.into_iter().enumerate() {
            xi1[i].push(s);
        }
    }
    let eta2 = column(eta, n - 1);
    let dl = -leg_mean(&eta2);
    let rhs2: Vec<PeriodicFunction> = eta2.iter().map(|f| f.scale(1.0 / lam)).collect();
    let (xi2, _) = solve_multiple_small_divisor(&rhs2, omega, floor)?;
    let xi = (0..m)
        .map(|i| {
            let mut v = xi1[i].clone();
            v.push(xi2[i].clone());
            v.extend(xi3[i].iter().cloned());
            v.push(xi4[i].clone());
            v
        })
        .collect();
    Ok((xi, dl))
}

fn add_correction(curves: &[CurveMap], delta: &[Vec<Vec<f64>>], cutoff: usize) -> Result<Vec<CurveMap>> {
    curves.iter().zip(delta).map(|(c, d)| Ok(c.add_points(d)?.clean_tail(cutoff))).collect()
}

/// One Newton step for the torus.
pub fn torus_newton_step(
    model: &dyn HamiltonianModel,
    state: &TorusState,
    frame: &AdaptedFrame,
    flows: &LegFlows,
    cfg: &NewtonConfig,
    mode: Mode,
    target: f64,
) -> Result<(TorusState, NewtonReport)> {
    let m = state.legs();
    let e = flows.torus_error_fields(state);
    let err_before = crate::frame::max_abs(&e);
    let eta = frame_rhs(frame, &e)?;
    let constraint_error = match mode {
        Mode::Isochronous => 0.0,
        Mode::Isoenergetic => mean_energy(model, &state.k[0])? - target,
        Mode::FixedCalabi => calabi(model, &state.k[0]) - target,
    };
    let k = frame.n - 1;
    let sol = torus_solve(frame, &eta, mode, &DVector::zeros(k), -constraint_error, cfg.divisor_floor, cfg.twist_cond_max)?;
    let delta = apply_frame(frame, &sol.xi);
    let cutoff = tail_cutoff(state.grid_size(), cfg.tail_divisor);
    let new_k = add_correction(&state.k, &delta, cutoff)?;
    let mut next = TorusState { k: new_k, ..state.clone() };
    if mode != Mode::Isochronous {
        next.period += m as f64 * sol.delta_tau;
    }
    let report = NewtonReport {
        err_before,
        constraint_error,
        delta_tau: sol.delta_tau,
        eta3_mean: sol.eta3_mean,
        eta1_residual_mean: sol.eta1_mean,
        twist_cond: sol.cond,
        reduction_residual: reduction_residual(frame, flows),
    };
    Ok((next, report))
}

/// One Newton step for the bundle and its multiplier.
pub fn bundle_newton_step(
    state: &TorusState,
    frame: &AdaptedFrame,
    flows: &LegFlows,
    cfg: &NewtonConfig,
) -> Result<(TorusState, BundleReport)> {
    let e = flows.bundle_error_fields(state);
    let err_before = crate::frame::max_abs(&e);
    let eta = frame_rhs(frame, &e)?;
    let (xi, dl) = bundle_solve(frame, &eta, cfg.divisor_floor)?;
    let delta = apply_frame(frame, &xi);
    let cutoff = tail_cutoff(state.grid_size(), cfg.tail_divisor);
    let new_w = add_correction(&state.w, &delta, cutoff)?;
    let next = TorusState { w: new_w, lambda: state.lambda + dl, ..state.clone() };
    Ok((next, BundleReport { err_before, delta_lambda: dl }))
}

/// Alternate bundle and torus Newton steps until `err < eps`,
/// `err_W < eps_W` and the energy or Calabi constraint is met to `eps`.
/// Each round first corrects the bundle on the current torus and then the
/// torus in the frame built with the corrected bundle, so one integration
/// of the legs is needed per round.
///
/// `target` is the energy (isoenergetic) or Calabi invariant (fixed Calabi);
/// it defaults to the value of the input state and is ignored in isochronous
/// mode.
pub fn refine(
    model: &dyn HamiltonianModel,
    state: &TorusState,
    cfg: &NewtonConfig,
    mode: Mode,
    target: Option<f64>,
) -> Result<RefineOutcome> {
    state.validate()?;
    check_hyperbolic(state.lambda, cfg.hyperbolicity_delta)?;
    let h = match (mode, target) {
        (Mode::Isochronous, _) => f64::NAN,
        (_, Some(h)) => h,
        (Mode::Isoenergetic, None) => state.energy,
        (Mode::FixedCalabi, None) => calabi(model, &state.k[0]),
    };
    let mut st = state.clone();
    let mut flows = integrate_legs(model, &st, &cfg.flow)?;
    let mut history = Vec::new();
    let mut reports = Vec::new();
    let mut first_err = f64::NAN;
    for it in 0..=cfg.max_iters {
        let err = flows.torus_error(&st);
        let err_w = flows.bundle_error(&st);
        history.push((err, err_w));
        if it == 0 {
            first_err = err;
        }
        let constraint = match mode {
            Mode::Isochronous => 0.0,
            Mode::Isoenergetic => (mean_energy(model, &st.k[0])? - h).abs(),
            Mode::FixedCalabi => (calabi(model, &st.k[0]) - h).abs(),
        };
        log::debug!("refine iteration {it}: err = {err:.3e}, err_W = {err_w:.3e}, constraint {constraint:.3e}");
        if err < cfg.eps && err_w < cfg.eps_w && constraint < cfg.eps {
            st.energy = if mode == Mode::Isoenergetic { h } else { mean_energy(model, &st.k[0])? };
            return Ok(RefineOutcome { state: st, iterations: it, history, err, err_w, reports, flows });
        }
        if it == cfg.max_iters {
            break;
        }
        if !err.is_finite() || (it > 0 && err > 1e3 * first_err.max(cfg.eps)) {
            return Err(Error::NoConvergence(format!("torus error diverged to {err:e}")));
        }
        let frame = build_frame(model, &st, &flows, &cfg.frame)?;
        let (sw, _) = bundle_newton_step(&st, &frame, &flows, cfg)?;
        check_hyperbolic(sw.lambda, cfg.hyperbolicity_delta)?;
        let frame = build_frame(model, &sw, &flows, &cfg.frame)?;
        let (next, rep) = torus_newton_step(model, &sw, &frame, &flows, cfg, mode, h)?;
        reports.push(rep);
        flows = integrate_legs(model, &next, &cfg.flow)?;
        st = next;
    }
    let (err, err_w) = *history.last().unwrap();
    Err(Error::NoConvergence(format!(
        "{} iterations: err = {err:.3e}, err_W = {err_w:.3e}",
        cfg.max_iters
    )))
}
