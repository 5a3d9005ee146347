//! Tangents of a family of tori with respect to `T`, `h` and `ω`, and the
//! predictor-corrector continuation step with step size and grid control.

use std::ops::ControlFlow;

use nalgebra::DVector;

use crate::flow::{par_map, flow_second_action, FlowConfig};
use crate::frame::{build_frame, integrate_legs, AdaptedFrame, LegFlows};
use crate::newton::{apply_frame, bundle_solve, frame_rhs, refine, torus_solve, Mode, NewtonConfig, RefineOutcome};
use crate::observables::{ObservableOptions, ObservableRecord};
use crate::symplectic_model::HamiltonianModel;
use crate::torus_rep::{tail_cutoff, CurveMap, PeriodicFunction, TorusState};
use crate::{Error, ErrorClass, Result};

/// Continuation parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parameter {
    /// Flying time, refined isochronously.
    Period,
    /// Energy, refined isoenergetically.
    Energy,
    /// Rotation number at fixed energy, refined isoenergetically.
    Rotation,
}

impl Parameter {
    pub fn name(self) -> &'static str {
        match self {
            Parameter::Period => "T",
            Parameter::Energy => "h",
            Parameter::Rotation => "omega",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "T" | "t" | "period" => Ok(Parameter::Period),
            "h" | "energy" => Ok(Parameter::Energy),
            "omega" | "w" | "rotation" => Ok(Parameter::Rotation),
            _ => Err(Error::InvalidInput(format!("unknown continuation parameter '{s}'"))),
        }
    }

    fn corrector_mode(self) -> Mode {
        match self {
            Parameter::Period => Mode::Isochronous,
            Parameter::Energy | Parameter::Rotation => Mode::Isoenergetic,
        }
    }
}

/// Derivatives of a torus, its bundle, `T` and `λ` along a family.
#[derive(Debug, Clone)]
pub struct TangentData {
    pub parameter: Parameter,
    pub dk: Vec<CurveMap>,
    pub dw: Vec<CurveMap>,
    /// `∂T`, equal to one for [`Parameter::Period`].
    pub dperiod: f64,
    pub dlambda: f64,
    /// Frame coordinates of `dK`, `[leg][component]`.
    pub xi: Vec<Vec<PeriodicFunction>>,
}

impl TangentData {
    /// `sqrt(∂T² + ∂λ² + Σ_i ⟨|∂K_i|²⟩ + ⟨|∂W_i|²⟩)`.
    pub fn compound_norm(&self) -> f64 {
        let s: f64 = self.dk.iter().chain(self.dw.iter()).map(|c| c.mean_sq_norm()).sum();
        (self.dperiod * self.dperiod + self.dlambda * self.dlambda + s).sqrt()
    }
}

/// Tangent along the family for `parameter`, using a frame built on the
/// current state.
pub fn tangent(
    model: &dyn HamiltonianModel,
    state: &TorusState,
    frame: &AdaptedFrame,
    parameter: Parameter,
    cfg: &NewtonConfig,
) -> Result<TangentData> {
    let m = state.legs();
    let n = frame.n;
    let k = n - 1;
    let nn = state.grid_size();
    let zero = PeriodicFunction::constant(nn, 0.0)?;
    let eta = vec![vec![zero; 2 * n]; m];
    let mut extra = DVector::zeros(k);
    let (mode, rhs_h) = match parameter {
        Parameter::Period => {
            extra[k - 1] = -1.0 / m as f64;
            (Mode::Isochronous, 0.0)
        }
        Parameter::Energy => (Mode::Isoenergetic, 1.0),
        Parameter::Rotation => {
            extra[0] = 1.0 / m as f64;
            (Mode::Isoenergetic, 0.0)
        }
    };
    let sol = torus_solve(frame, &eta, mode, &extra, rhs_h, cfg.divisor_floor, cfg.twist_cond_max)?;
    let dperiod = match parameter {
        Parameter::Period => 1.0,
        _ => m as f64 * sol.delta_tau,
    };
    let dk_pts = apply_frame(frame, &sol.xi);
    let dk = dk_pts.iter().map(|p| CurveMap::from_points(p)).collect::<Result<Vec<_>>>()?;

    let ew = bundle_forcing(model, state, &dk_pts, dperiod, parameter, &cfg.flow)?;
    let eta_w = frame_rhs(frame, &ew)?;
    let (xi_w, dlambda) = bundle_solve(frame, &eta_w, cfg.divisor_floor)?;
    let dw = apply_frame(frame, &xi_w).iter().map(|p| CurveMap::from_points(p)).collect::<Result<Vec<_>>>()?;
    Ok(TangentData { parameter, dk, dw, dperiod, dlambda, xi: sol.xi })
}

/// Parameter derivative of the bundle equation at fixed `W`:
/// `(∂T/m) DX_H(φ(K_i)) Dφ W_i + D²φ[W_i, ∂K_i]`, minus `(λ/m) W'_{i+1}(θ+ω/m)`
/// for the rotation tangent.
fn bundle_forcing(
    model: &dyn HamiltonianModel,
    state: &TorusState,
    dk: &[Vec<Vec<f64>>],
    dperiod: f64,
    parameter: Parameter,
    cfg: &FlowConfig,
) -> Result<Vec<Vec<Vec<f64>>>> {
    let m = state.legs();
    let nn = state.grid_size();
    let t = state.period / m as f64;
    let jobs: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = (0..m)
        .flat_map(|i| {
            let kp = state.k[i].points();
            let wp = state.w[i].points();
            (0..nn).map(move |j| (kp[j].clone(), wp[j].clone(), dk[i][j].clone())).collect::<Vec<_>>()
        })
        .collect();
    let res = par_map(&jobs, |(z, w, v)| {
        let sa = flow_second_action(model, z, w, v, t, cfg)?;
        let a = model.jacobian_matrix(&sa.end)? * DVector::from_column_slice(&sa.du);
        Ok(sa.d2.iter().zip(a.iter()).map(|(d2, x)| d2 + dperiod / m as f64 * x).collect::<Vec<f64>>())
    })?;
    let mut out: Vec<Vec<Vec<f64>>> = res.chunks(nn).map(|c| c.to_vec()).collect();
    if parameter == Parameter::Rotation {
        for (i, leg) in out.iter_mut().enumerate() {
            let dwn = state.w[(i + 1) % m].derivative().rotate(state.omega / m as f64).points();
            for (e, d) in leg.iter_mut().zip(dwn) {
                for (x, y) in e.iter_mut().zip(d) {
                    *x -= state.lambda / m as f64 * y;
                }
            }
        }
    }
    Ok(out)
}

/// Convenience wrapper integrating the legs and building the frame.
pub fn tangent_at(
    model: &dyn HamiltonianModel,
    state: &TorusState,
    parameter: Parameter,
    cfg: &NewtonConfig,
) -> Result<TangentData> {
    let flows = integrate_legs(model, state, &cfg.flow)?;
    let frame = build_frame(model, state, &flows, &cfg.frame)?;
    tangent(model, state, &frame, parameter, cfg)
}

/// `state + a·tangent`, with the energy and rotation number moved along.
pub fn predict(state: &TorusState, tan: &TangentData, a: f64) -> Result<TorusState> {
    let k = state.k.iter().zip(&tan.dk).map(|(c, d)| c.axpy(a, d)).collect::<Result<Vec<_>>>()?;
    let w = state.w.iter().zip(&tan.dw).map(|(c, d)| c.axpy(a, d)).collect::<Result<Vec<_>>>()?;
    let mut next = TorusState {
        k,
        w,
        period: state.period + a * tan.dperiod,
        lambda: state.lambda + a * tan.dlambda,
        ..state.clone()
    };
    match tan.parameter {
        Parameter::Energy => next.energy += a,
        Parameter::Rotation => next.omega += a,
        Parameter::Period => {}
    }
    Ok(next)
}

/// Closest noble number within `tol` of `x`: the continued fraction of `x`
/// is kept up to some position and followed by ones.
pub fn nobilize(x: f64, tol: f64) -> f64 {
    if !x.is_finite() {
        return x;
    }
    let golden = (1.0 + 5f64.sqrt()) / 2.0;
    let mut cf = Vec::new();
    let mut r = x;
    for _ in 0..40 {
        let a = r.floor();
        cf.push(a);
        let frac = r - a;
        if frac < 1e-15 {
            break;
        }
        r = 1.0 / frac;
    }
    for len in 1..=cf.len() {
        let mut tail = golden;
        for &a in cf[1..len].iter().rev() {
            tail = a + 1.0 / tail;
        }
        let v = if len == 1 { cf[0] + 1.0 / golden } else { cf[0] + 1.0 / tail };
        if (v - x).abs() < tol {
            return v;
        }
    }
    x
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuationConfig {
    /// Initial step in the compound norm.
    pub alpha: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Tolerances `ε₁` (grid doubling) and `ε₂` (grid halving); `ε` and
    /// `ε^W` come from the Newton configuration.
    pub eps1: f64,
    pub eps2: f64,
    pub n_des: usize,
    pub n_alpha: usize,
    pub n_min: usize,
    pub n_max: usize,
    pub max_tori: usize,
    /// Stop once `|C₁|` drops below this after having exceeded it.
    pub calabi_floor: f64,
    pub param_min: f64,
    pub param_max: f64,
    /// Tolerance of [`nobilize`] for rotation steps.
    pub noble_tol: f64,
    /// A corrected torus farther than this multiple of the step from the
    /// predictor counts as a failed correction.
    pub max_correction: f64,
    pub newton: NewtonConfig,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-4,
            alpha_min: 1e-5,
            alpha_max: 0.1,
            eps1: 1e-8,
            eps2: 1e-12,
            n_des: 4,
            n_alpha: 5,
            n_min: 32,
            n_max: 8192,
            max_tori: 100,
            calabi_floor: 1e-3,
            param_min: f64::NEG_INFINITY,
            param_max: f64::INFINITY,
            noble_tol: 1.6e-4,
            max_correction: 0.5,
            newton: NewtonConfig::default(),
        }
    }
}

impl ContinuationConfig {
    pub fn validate(&self) -> Result<()> {
        let e = self.newton.eps;
        if !(self.eps2 < self.eps1 && self.eps1 < e) {
            return Err(Error::InvalidInput("need eps2 < eps1 < eps".into()));
        }
        if !(self.alpha > 0.0 && self.alpha_min > 0.0 && self.alpha_min <= self.alpha_max) {
            return Err(Error::InvalidInput("step sizes must be positive and ordered".into()));
        }
        if self.n_des == 0 || !self.n_min.is_power_of_two() || !self.n_max.is_power_of_two() || self.n_min > self.n_max
        {
            return Err(Error::InvalidInput("bad grid limits or n_des".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub alpha_used: f64,
    pub alpha_next: f64,
    pub grid: usize,
    pub iterations: usize,
    pub halvings: usize,
    pub grid_doublings: usize,
    pub grid_halvings: usize,
    pub err: f64,
    pub err_w: f64,
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: TorusState,
    pub flows: LegFlows,
    pub log: StepLog,
}

fn recoverable(e: &Error) -> bool {
    e.class() == ErrorClass::Numerical
}

fn corrector(
    model: &dyn HamiltonianModel,
    pred: &TorusState,
    parameter: Parameter,
    newton: &NewtonConfig,
) -> Result<RefineOutcome> {
    let target = match parameter {
        Parameter::Period => None,
        _ => Some(pred.energy),
    };
    refine(model, pred, newton, parameter.corrector_mode(), target)
}

/// `sqrt(Σ_i ⟨|K_i - K̃_i|²⟩)` between two states on the same grid.
fn correction_distance(a: &TorusState, b: &TorusState) -> Result<f64> {
    let mut s = 0.0;
    for (x, y) in a.k.iter().zip(&b.k) {
        s += x.axpy(-1.0, y)?.mean_sq_norm();
    }
    Ok(s.sqrt())
}

fn finish(model: &dyn HamiltonianModel, mut state: TorusState, parameter: Parameter) -> Result<TorusState> {
    state = state.canonical();
    if parameter == Parameter::Period {
        state.energy = crate::newton::mean_energy(model, &state.k[0])?;
    }
    Ok(state)
}

/// One continuation step: tangent predictor, Newton corrector with step
/// halving, grid doubling on failure, and grid adaptation on success. The
/// returned state is canonicalized so that reruns from a stored state are
/// bitwise reproducible.
pub fn continuation_step(
    model: &dyn HamiltonianModel,
    state: &TorusState,
    alpha: f64,
    cfg: &ContinuationConfig,
    parameter: Parameter,
) -> Result<StepOutcome> {
    cfg.validate()?;
    let mut alpha = alpha.clamp(cfg.alpha_min, cfg.alpha_max);
    let mut base = state.clone();
    let mut grid_doublings = 0;
    'restart: loop {
        let n = base.grid_size();
        let tan = tangent_at(model, &base, parameter, &cfg.newton)?;
        let norm = tan.compound_norm();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(Error::NonFinite("tangent norm".into()));
        }
        let mut a = alpha;
        let mut halvings = 0;
        let outcome = loop {
            let mut step = a / norm;
            if parameter == Parameter::Rotation {
                let target = nobilize(base.omega + step, cfg.noble_tol);
                step = target - base.omega;
            }
            let attempt = predict(&base, &tan, step).and_then(|p| {
                let out = corrector(model, &p, parameter, &cfg.newton)?;
                let dist = correction_distance(&p, &out.state)?;
                if dist > cfg.max_correction * a {
                    return Err(Error::NoConvergence(format!("corrector moved {dist:e} for step {a:e}")));
                }
                Ok(out)
            });
            match attempt {
                Ok(out) => break Some(out),
                Err(e) if recoverable(&e) => {
                    log::debug!("corrector failed with step {a:e}: {e}");
                    if halvings == cfg.n_alpha {
                        break None;
                    }
                    halvings += 1;
                    a /= 2.0;
                }
                Err(e) => return Err(e),
            }
        };
        let Some(out) = outcome else {
            if 2 * n > cfg.n_max {
                return Err(Error::NoConvergence(format!(
                    "continuation step failed at N = {n} after {} step halvings",
                    cfg.n_alpha
                )));
            }
            base = base.resample(2 * n)?;
            grid_doublings += 1;
            continue 'restart;
        };
        let n_it = out.iterations;
        let mut st = out.state;
        let mut flows = out.flows;
        let mut err = out.err;
        let mut err_w = out.err_w;
        let mut grid_halvings = 0;
        if err < cfg.eps2 {
            // Halve N while the error on the coarser grid stays below ε₁.
            loop {
                let n_cur = st.grid_size();
                if n_cur / 2 < cfg.n_min {
                    break;
                }
                let cutoff = tail_cutoff(n_cur / 2, cfg.newton.tail_divisor);
                let cand = st.clean_tail(cutoff).resample(n_cur / 2)?;
                let fl = integrate_legs(model, &cand, &cfg.newton.flow)?;
                let e = fl.torus_error(&cand);
                if e > cfg.eps1 {
                    break;
                }
                err_w = fl.bundle_error(&cand);
                err = e;
                st = cand;
                flows = fl;
                grid_halvings += 1;
            }
        } else if err > cfg.eps1 {
            if 2 * st.grid_size() > cfg.n_max {
                return Err(Error::NoConvergence(format!("grid limit {} reached", cfg.n_max)));
            }
            let doubled = st.resample(2 * st.grid_size())?;
            let tight = NewtonConfig { eps: cfg.eps1, ..cfg.newton };
            let target = match parameter {
                Parameter::Period => None,
                _ => Some(doubled.energy),
            };
            match refine(model, &doubled, &tight, parameter.corrector_mode(), target) {
                Ok(o) => {
                    st = o.state;
                    flows = o.flows;
                    err = o.err;
                    err_w = o.err_w;
                    grid_doublings += 1;
                }
                Err(e) if recoverable(&e) => {
                    alpha = a / 2.0;
                    if alpha < cfg.alpha_min {
                        return Err(Error::NoConvergence("step size underflow after grid doubling".into()));
                    }
                    continue 'restart;
                }
                Err(e) => return Err(e),
            }
        }
        let alpha_next = (a * cfg.n_des as f64 / n_it.max(1) as f64).clamp(cfg.alpha_min, cfg.alpha_max);
        let st = finish(model, st, parameter)?;
        let log = StepLog {
            alpha_used: a,
            alpha_next,
            grid: st.grid_size(),
            iterations: n_it,
            halvings,
            grid_doublings,
            grid_halvings,
            err,
            err_w,
        };
        return Ok(StepOutcome { state: st, flows, log });
    }
}

/// Why [`run_family`] stopped.
#[derive(Debug, Clone, PartialEq)]
pub enum StopReason {
    MaxTori,
    CalabiFloor,
    ParameterBound,
    StepUnderflow,
    /// A step failed; the message carries the error.
    Failure(String),
    /// The sink asked to stop.
    Sink,
}

/// One accepted torus of a family.
#[derive(Debug, Clone)]
pub struct FamilyMember {
    pub index: usize,
    pub state: TorusState,
    pub observables: ObservableRecord,
    pub step: Option<StepLog>,
    /// Step size for the next continuation step.
    pub alpha_next: f64,
    /// Whether `|C₁|` has exceeded the Calabi floor so far.
    pub calabi_armed: bool,
}

/// Where a family run starts: a converged state and the bookkeeping of the
/// last accepted member (fresh runs use index 0 and the configured step).
#[derive(Debug, Clone)]
pub struct FamilyStart {
    pub state: TorusState,
    pub index: usize,
    pub alpha: f64,
    pub calabi_armed: bool,
    /// Emit the starting state as a member before stepping.
    pub emit_start: bool,
}

fn parameter_value(state: &TorusState, parameter: Parameter) -> f64 {
    match parameter {
        Parameter::Period => state.period,
        Parameter::Energy => state.energy,
        Parameter::Rotation => state.omega,
    }
}

/// Continue a family until a stopping predicate fires. Every accepted torus
/// (and the start, when requested) is passed to `sink`, which may stop the
/// run by returning `ControlFlow::Break`. Hard errors from the sink abort the
/// run.
pub fn run_family(
    model: &dyn HamiltonianModel,
    start: FamilyStart,
    cfg: &ContinuationConfig,
    parameter: Parameter,
    obs: &ObservableOptions,
    sink: &mut dyn FnMut(&FamilyMember) -> Result<ControlFlow<()>>,
) -> Result<(StopReason, usize)> {
    cfg.validate()?;
    let mut state = start.state;
    let mut index = start.index;
    let mut alpha = start.alpha;
    let mut armed = start.calabi_armed;
    let mut emitted = 0;
    if start.emit_start {
        let flows = integrate_legs(model, &state, &cfg.newton.flow)?;
        let o = ObservableRecord::compute(model, &state, &flows, obs)?;
        armed |= o.calabi[0].abs() > cfg.calabi_floor;
        let member = FamilyMember { index, state: state.clone(), observables: o, step: None, alpha_next: alpha, calabi_armed: armed };
        emitted += 1;
        if sink(&member)?.is_break() {
            return Ok((StopReason::Sink, emitted));
        }
    }
    loop {
        if emitted >= cfg.max_tori {
            return Ok((StopReason::MaxTori, emitted));
        }
        if alpha < cfg.alpha_min {
            return Ok((StopReason::StepUnderflow, emitted));
        }
        let out = match continuation_step(model, &state, alpha, cfg, parameter) {
            Ok(o) => o,
            Err(e) if recoverable(&e) => return Ok((StopReason::Failure(e.to_string()), emitted)),
            Err(e) => return Err(e),
        };
        index += 1;
        state = out.state;
        alpha = out.log.alpha_next;
        let o = ObservableRecord::compute(model, &state, &out.flows, obs)?;
        let c1 = o.calabi[0].abs();
        let was_armed = armed;
        armed |= c1 > cfg.calabi_floor;
        let member = FamilyMember {
            index,
            state: state.clone(),
            observables: o,
            step: Some(out.log),
            alpha_next: alpha,
            calabi_armed: armed,
        };
        emitted += 1;
        if sink(&member)?.is_break() {
            return Ok((StopReason::Sink, emitted));
        }
        if was_armed && c1 < cfg.calabi_floor {
            return Ok((StopReason::CalabiFloor, emitted));
        }
        let p = parameter_value(&state, parameter);
        if p < cfg.param_min || p > cfg.param_max {
            return Ok((StopReason::ParameterBound, emitted));
        }
    }
}

/// Residual of the linearized invariance equation for a torus tangent,
/// `Dφ ∂K_i + (∂T/m) X_H(φ(K_i)) - ∂K_{i+1}(θ+ω/m) - [ω] (1/m) K'_{i+1}(θ+ω/m)`.
pub fn tangent_residual(
    model: &dyn HamiltonianModel,
    state: &TorusState,
    flows: &LegFlows,
    tan: &TangentData,
) -> Result<f64> {
    let m = state.legs();
    let shift = state.omega / m as f64;
    let mut r = 0.0_f64;
    for i in 0..m {
        let dk = tan.dk[i].points();
        let next = tan.dk[(i + 1) % m].rotate(shift).points();
        let kd = state.k[(i + 1) % m].derivative().rotate(shift).points();
        for j in 0..state.grid_size() {
            let x = model.vector_field_vec(&flows.end[i][j])?;
            let lhs = &flows.jac[i][j] * DVector::from_column_slice(&dk[j]);
            for c in 0..state.dim() {
                let mut v = lhs[c] + tan.dperiod / m as f64 * x[c] - next[j][c];
                if tan.parameter == Parameter::Rotation {
                    v -= kd[j][c] / m as f64;
                }
                r = r.max(v.abs());
            }
        }
    }
    Ok(r)
}
