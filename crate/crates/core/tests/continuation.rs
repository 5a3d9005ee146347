mod common;

use std::ops::ControlFlow;
use std::sync::OnceLock;

use tori_core::continuation::{
    continuation_step, predict, run_family, tangent_at, tangent_residual, ContinuationConfig, FamilyStart, Parameter, StopReason,
};
use tori_core::frame::integrate_legs;
use tori_core::newton::NewtonConfig;
use tori_core::observables::ObservableOptions;
use tori_core::symplectic_model::Rtbp;
use tori_core::torus_rep::TorusState;

fn torus() -> &'static TorusState {
    static T: OnceLock<TorusState> = OnceLock::new();
    T.get_or_init(common::converged_torus)
}

#[test]
fn tangents_solve_the_linearized_invariance_equation() {
    let m = Rtbp::earth_moon();
    let st = torus();
    let cfg = NewtonConfig::default();
    let fl = integrate_legs(&m, st, &cfg.flow).unwrap();
    for p in [Parameter::Period, Parameter::Energy, Parameter::Rotation] {
        let tan = tangent_at(&m, st, p, &cfg).unwrap();
        let scale = tan.dk.iter().map(|c| c.max_abs()).fold(tan.dperiod.abs(), f64::max);
        let r = tangent_residual(&m, st, &fl, &tan).unwrap();
        // The fixture has amplitude 1e-3 and sits next to the periodic orbit,
        // so the frame reduces the flow only to about 1e-3 relative and the
        // tangent, solved in frame coordinates, inherits that.
        assert!(r < 5e-3 * scale, "{p:?}: residual {r:e}, scale {scale:e}");
        assert!(tan.compound_norm().is_finite());
    }
    assert_eq!(tangent_at(&m, st, Parameter::Period, &cfg).unwrap().dperiod, 1.0);
}

#[test]
fn prediction_moves_the_continued_scalar() {
    let m = Rtbp::earth_moon();
    let st = torus();
    let cfg = NewtonConfig::default();
    let tp = tangent_at(&m, st, Parameter::Period, &cfg).unwrap();
    let p = predict(st, &tp, 1e-3).unwrap();
    assert!((p.period - st.period - 1e-3 * tp.dperiod).abs() < 1e-15);
    assert_eq!(p.omega, st.omega);
    let tw = tangent_at(&m, st, Parameter::Rotation, &cfg).unwrap();
    let p = predict(st, &tw, 1e-4).unwrap();
    assert!((p.omega - st.omega - 1e-4).abs() < 1e-15);
}

#[test]
fn a_step_converges_and_logs_itself() {
    let m = Rtbp::earth_moon();
    let cfg = ContinuationConfig::default();
    let out = continuation_step(&m, torus(), cfg.alpha, &cfg, Parameter::Period).unwrap();
    assert!(out.log.err < cfg.eps1);
    assert!(out.log.alpha_next >= cfg.alpha_min && out.log.alpha_next <= cfg.alpha_max);
    assert!(out.log.grid >= cfg.n_min && out.log.grid <= cfg.n_max);
    assert_ne!(out.state.period, torus().period);
    assert_eq!(out.state.omega, torus().omega);
}

#[test]
fn family_runs_are_reproducible_and_stop_on_request() {
    let m = Rtbp::earth_moon();
    let cfg = ContinuationConfig { max_tori: 3, ..Default::default() };
    let run = |cfg: &ContinuationConfig| {
        let mut seen = Vec::new();
        let start = FamilyStart { state: torus().clone(), index: 0, alpha: cfg.alpha, calabi_armed: false, emit_start: true };
        let r = run_family(&m, start, cfg, Parameter::Period, &ObservableOptions::default(), &mut |mm| {
            seen.push(mm.clone());
            Ok(ControlFlow::Continue(()))
        })
        .unwrap();
        (r, seen)
    };
    let ((stop, n), a) = run(&cfg);
    assert_eq!(stop, StopReason::MaxTori);
    assert_eq!(n, 3);
    assert!(a[0].step.is_none() && a[1].step.is_some());
    assert_eq!(a.iter().map(|x| x.index).collect::<Vec<_>>(), vec![0, 1, 2]);
    let (_, b) = run(&cfg);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.state, y.state);
    }

    // Resuming from the second member reproduces the third.
    let start = FamilyStart { state: a[1].state.clone(), index: 1, alpha: a[1].alpha_next, calabi_armed: a[1].calabi_armed, emit_start: false };
    let mut resumed = Vec::new();
    let cfg1 = ContinuationConfig { max_tori: 1, ..Default::default() };
    run_family(&m, start, &cfg1, Parameter::Period, &ObservableOptions::default(), &mut |mm| {
        resumed.push(mm.clone());
        Ok(ControlFlow::Continue(()))
    })
    .unwrap();
    assert_eq!(resumed[0].state, a[2].state);
    assert_eq!(resumed[0].index, 2);

    let start = FamilyStart { state: torus().clone(), index: 0, alpha: cfg.alpha, calabi_armed: false, emit_start: true };
    let (stop, n) = run_family(&m, start, &cfg, Parameter::Period, &ObservableOptions::default(), &mut |_| Ok(ControlFlow::Break(()))).unwrap();
    assert_eq!((stop, n), (StopReason::Sink, 1));
}

#[test]
fn parameter_bound_stops_the_run() {
    let m = Rtbp::earth_moon();
    let cfg = ContinuationConfig { max_tori: 10, param_max: torus().period, ..Default::default() };
    let start = FamilyStart { state: torus().clone(), index: 0, alpha: cfg.alpha, calabi_armed: false, emit_start: false };
    let (stop, n) = run_family(&m, start, &cfg, Parameter::Period, &ObservableOptions::default(), &mut |_| Ok(ControlFlow::Continue(()))).unwrap();
    assert_eq!((stop, n), (StopReason::ParameterBound, 1));
}

#[test]
fn invalid_tolerances_are_rejected() {
    let cfg = ContinuationConfig { eps2: 1e-8, eps1: 1e-9, ..Default::default() };
    assert!(cfg.validate().is_err());
    let cfg = ContinuationConfig { eps1: 1e-6, ..Default::default() };
    assert!(cfg.validate().is_err());
}
