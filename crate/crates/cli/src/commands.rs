use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::path::Path;

use tori_core::cohomology::resonant_wavenumbers;
use tori_core::continuation::{run_family, FamilyStart, StopReason};
use tori_core::frame::{build_frame, integrate_legs, reduction_residual};
use tori_core::newton::{eta3_scaling, loglog_slope, refine as refine_torus, twist_report, Mode};
use tori_core::observables::{globalize_surface, ObservableRecord};
use tori_core::persistence::{self, atomic_write, read_record, record_paths, write_record, TorusRecord};
use tori_core::seeds::{lyapunov_po_target, seed_from_po, PoTarget};
use tori_core::symplectic_model::Rtbp;
use tori_core::Error;

use crate::config::{mode_name, RunConfig};
use crate::{Command, Failure};

const ETA3_DELTAS: [f64; 3] = [1e-3, 1e-4, 1e-5];

fn model(cfg: &RunConfig) -> Result<Rtbp, Failure> {
    Ok(Rtbp::new(cfg.mu)?)
}

fn config_error(msg: String) -> Failure {
    Failure { code: 2, message: format!("configuration error: {msg}") }
}

fn require_rho(cfg: &RunConfig) -> Result<f64, Failure> {
    let rho = cfg.rho.ok_or_else(|| config_error("seed needs rho".into()))?;
    let bad = resonant_wavenumbers(rho, cfg.grid, cfg.newton.divisor_floor);
    if !bad.is_empty() {
        return Err(config_error(format!(
            "rho = {rho} is resonant on a grid of {}: small divisors at k = {bad:?}",
            cfg.grid
        )));
    }
    Ok(rho)
}

/// Input checks shared by `--dry-run`: everything except the computation.
pub fn dry_run(cfg: &RunConfig, cmd: &Command) -> Result<(), Failure> {
    match cmd {
        Command::Seed { .. } => {
            require_rho(cfg)?;
        }
        Command::Refine { input, .. }
        | Command::Observe { input }
        | Command::ExportSurface { input, .. }
        | Command::Diagnose { input, .. } => {
            read_record(input)?;
        }
        Command::Continue { input, dir, resume, .. } => {
            start_of_family(cfg, input.as_deref(), dir, *resume)?;
        }
        Command::Index { dir } => {
            record_paths(dir)?;
        }
    }
    if let Command::Diagnose { kind, .. } = cmd {
        check_kind(kind)?;
    }
    Ok(())
}

fn summary(rec: &TorusRecord) -> String {
    let s = &rec.state;
    let mut out = format!(
        "id {} T {:.15} omega {:.15} h {:.15} lambda {:.15} N {} m {} err {:.3e} err_W {:.3e}",
        rec.id,
        s.period,
        s.omega,
        s.energy,
        s.lambda,
        s.grid_size(),
        s.legs(),
        rec.err,
        rec.err_w
    );
    if let Some(o) = &rec.observables {
        let _ = write!(out, " C1 {:.6e} C2 {:.6e} Lu {:.3}", o.calabi[0], o.calabi[1], o.unstable_multiplier);
    }
    out
}

pub fn seed(cfg: &RunConfig, out: &Path) -> Result<(), Failure> {
    let rho = require_rho(cfg)?;
    let m = model(cfg)?;
    let po = lyapunov_po_target(&m, cfg.po_family, PoTarget::Rotation(rho), &cfg.po_config())?;
    log::info!("periodic orbit: T = {}, h = {}", po.period, po.energy);
    let st = seed_from_po(&m, &po, cfg.legs, cfg.grid, cfg.amp, &cfg.newton.flow)?;
    let res = refine_torus(&m, &st, &cfg.newton, cfg.mode, None)?;
    log::info!("refined in {} iterations: {:?}", res.iterations, res.history);
    let obs = ObservableRecord::compute(&m, &res.state, &res.flows, &cfg.observable_options())?;
    let rec = TorusRecord {
        family: cfg.tag.clone().unwrap_or_else(|| "seed".into()),
        id: 0,
        parent: None,
        parameter: "seed".into(),
        generator: cfg.generator(),
        alpha_used: 0.0,
        alpha_next: cfg.cont.alpha,
        calabi_armed: false,
        err: res.err,
        err_w: res.err_w,
        state: res.state,
        observables: Some(obs),
    };
    write_record(&rec, out)?;
    println!("{}", summary(&rec));
    Ok(())
}

pub fn refine(cfg: &RunConfig, input: &Path, out: &Path) -> Result<(), Failure> {
    let m = model(cfg)?;
    let src = read_record(input)?;
    let res = refine_torus(&m, &src.state, &cfg.newton, cfg.mode, None)?;
    let obs = ObservableRecord::compute(&m, &res.state, &res.flows, &cfg.observable_options())?;
    let rec = TorusRecord {
        parent: Some(src.id),
        parameter: format!("refine-{}", mode_name(cfg.mode)),
        err: res.err,
        err_w: res.err_w,
        state: res.state,
        observables: Some(obs),
        ..src
    };
    write_record(&rec, out)?;
    println!("{} iterations {}", summary(&rec), res.iterations);
    Ok(())
}

fn family_tag(cfg: &RunConfig, dir: &Path) -> String {
    cfg.tag.clone().unwrap_or_else(|| {
        dir.file_name().map(|s| s.to_string_lossy().replace(char::is_whitespace, "_")).unwrap_or_else(|| "family".into())
    })
}

/// Starting point of a family run and its tag.
fn start_of_family(
    cfg: &RunConfig,
    input: Option<&Path>,
    dir: &Path,
    resume: bool,
) -> Result<(FamilyStart, String, TorusRecord), Failure> {
    let existing = if dir.exists() { record_paths(dir)? } else { Vec::new() };
    if resume {
        let last = persistence::last_record(dir)?
            .ok_or_else(|| config_error(format!("--resume: no records in {}", dir.display())))?;
        if last.parameter != cfg.param.name() && last.id != 0 {
            return Err(config_error(format!(
                "--resume: family was continued in '{}', not '{}'",
                last.parameter,
                cfg.param.name()
            )));
        }
        let start = FamilyStart {
            state: last.state.clone(),
            index: last.id as usize,
            alpha: last.alpha_next,
            calabi_armed: last.calabi_armed,
            emit_start: false,
        };
        return Ok((start, last.family.clone(), last));
    }
    if !existing.is_empty() {
        return Err(config_error(format!("{} already holds records; use --resume", dir.display())));
    }
    let input = input.ok_or_else(|| config_error("continue needs a starting record or --resume".into()))?;
    let src = read_record(input)?;
    let start = FamilyStart { state: src.state.clone(), index: 0, alpha: cfg.cont.alpha, calabi_armed: false, emit_start: true };
    Ok((start, family_tag(cfg, dir), src))
}

pub fn continue_family(cfg: &RunConfig, input: Option<&Path>, dir: &Path, resume: bool) -> Result<(), Failure> {
    let m = model(cfg)?;
    let (start, tag, src) = start_of_family(cfg, input, dir, resume)?;
    std::fs::create_dir_all(dir)?;
    let generator = src.generator;
    let param = cfg.param;
    let mut opts = cfg.observable_options();
    opts.generator = generator;
    let mut last_ok: Option<u64> = None;
    let mut sink = |mm: &tori_core::continuation::FamilyMember| -> tori_core::Result<ControlFlow<()>> {
        let (err, err_w) = match &mm.step {
            Some(s) => (s.err, s.err_w),
            None => (src.err, src.err_w),
        };
        let rec = TorusRecord {
            family: tag.clone(),
            id: mm.index as u64,
            parent: mm.index.checked_sub(1).map(|p| p as u64),
            parameter: if mm.step.is_some() { param.name().into() } else { src.parameter.clone() },
            generator,
            alpha_used: mm.step.as_ref().map_or(0.0, |s| s.alpha_used),
            alpha_next: mm.alpha_next,
            calabi_armed: mm.calabi_armed,
            err,
            err_w,
            state: mm.state.clone(),
            observables: Some(mm.observables.clone()),
        };
        write_record(&rec, &dir.join(rec.file_name()))?;
        println!("{}", summary(&rec));
        last_ok = Some(rec.id);
        Ok(ControlFlow::Continue(()))
    };
    let result = run_family(&m, start, &cfg.cont, param, &opts, &mut sink);
    let index = persistence::write_index(dir);
    let (reason, count) = result?;
    index?;
    println!("stopped: {} after {count} new records (last id {})", describe(&reason), last_ok.map_or("-".into(), |i| i.to_string()));
    match reason {
        StopReason::Failure(msg) => Err(Failure { code: 3, message: format!("continuation failed: {msg}") }),
        _ => Ok(()),
    }
}

fn describe(r: &StopReason) -> String {
    match r {
        StopReason::MaxTori => "maximum number of tori".into(),
        StopReason::CalabiFloor => "Calabi invariant below the floor".into(),
        StopReason::ParameterBound => "parameter bound".into(),
        StopReason::StepUnderflow => "step size below minimum".into(),
        StopReason::Failure(m) => format!("failure ({m})"),
        StopReason::Sink => "stopped by caller".into(),
    }
}

pub fn observe(cfg: &RunConfig, input: &Path) -> Result<(), Failure> {
    let m = model(cfg)?;
    let rec = read_record(input)?;
    let flows = integrate_legs(&m, &rec.state, &cfg.newton.flow)?;
    let mut opts = cfg.observable_options();
    opts.generator = rec.generator;
    let o = ObservableRecord::compute(&m, &rec.state, &flows, &opts)?;
    let d = &o.distances;
    let f = &o.frequencies;
    let lines = [
        ("generator", rec.generator.name().to_string()),
        ("T", o.period.to_string()),
        ("omega", o.omega.to_string()),
        ("h", o.energy.to_string()),
        ("lambda", rec.state.lambda.to_string()),
        ("Lu", o.unstable_multiplier.to_string()),
        ("chi", o.exponent.to_string()),
        ("C1", o.calabi[0].to_string()),
        ("C2", o.calabi[1].to_string()),
        ("r1", o.radii[0].to_string()),
        ("r2", o.radii[1].to_string()),
        ("d_TK_X", d.tangent_field.to_string()),
        ("d_Es_Eu", d.stable_unstable.to_string()),
        ("d_Es_Ec", d.stable_center.to_string()),
        ("d_Eu_Ec", d.unstable_center.to_string()),
        ("omega_p", f.omega_p.to_string()),
        ("omega_v", f.omega_v.to_string()),
        ("nu_p", f.nu_p.to_string()),
        ("nu_v", f.nu_v.to_string()),
        ("N", o.grid.to_string()),
        ("m", o.legs.to_string()),
        ("err", flows.torus_error(&rec.state).to_string()),
        ("err_W", flows.bundle_error(&rec.state).to_string()),
    ];
    for (k, v) in lines {
        println!("{k} {v}");
    }
    Ok(())
}

pub fn export_surface(cfg: &RunConfig, input: &Path, out: &Path) -> Result<(), Failure> {
    let m = model(cfg)?;
    let rec = read_record(input)?;
    let st = &rec.state;
    let s = globalize_surface(&m, st, cfg.n1, cfg.n2, &cfg.newton.flow)?;
    let mut text = String::new();
    let _ = writeln!(
        text,
        "# n1 {} n2 {} m {} N {} T {:.17e} omega {:.17e} h {:.17e}",
        s.n1,
        s.n2,
        st.legs(),
        st.grid_size(),
        st.period,
        st.omega,
        st.energy
    );
    let _ = writeln!(text, "# theta1 theta2 x1 x2 x3");
    for (i2, row) in s.points.iter().enumerate() {
        for (i1, p) in row.iter().enumerate() {
            let _ = writeln!(
                text,
                "{} {} {:.17e} {:.17e} {:.17e}",
                i1 as f64 / s.n1 as f64,
                i2 as f64 / s.n2 as f64,
                p[0],
                p[1],
                p[2]
            );
        }
    }
    for (label, curve) in [("curve theta2=0", &s.curve), ("transversal theta1=0", &s.transversal)] {
        let _ = writeln!(text, "\n# generator {label}");
        for p in curve {
            let _ = writeln!(text, "{:.17e} {:.17e} {:.17e}", p[0], p[1], p[2]);
        }
    }
    atomic_write(out, text.as_bytes())?;
    println!("wrote {} x {} surface to {}", s.n1, s.n2, out.display());
    Ok(())
}

fn check_kind(kind: &str) -> Result<(), Failure> {
    match kind {
        "eta3-scaling" | "twist" | "frame" => Ok(()),
        _ => Err(config_error(format!("unknown diagnostic '{kind}' (eta3-scaling, twist, frame)"))),
    }
}

pub fn diagnose(cfg: &RunConfig, input: &Path, kind: &str) -> Result<(), Failure> {
    check_kind(kind)?;
    let m = model(cfg)?;
    let rec = read_record(input)?;
    let st = &rec.state;
    match kind {
        "eta3-scaling" => {
            let pts = eta3_scaling(&m, st, &ETA3_DELTAS, cfg.rng_seed, &cfg.newton.flow)?;
            println!("delta |<eta3>|");
            for (d, v) in &pts {
                println!("{d:e} {v:.6e}");
            }
            println!("slope {:.4}", loglog_slope(&pts));
        }
        "twist" | "frame" => {
            let flows = integrate_legs(&m, st, &cfg.newton.flow)?;
            let frame = build_frame(&m, st, &flows, &cfg.newton.frame)?;
            if kind == "twist" {
                for mode in [Mode::Isochronous, Mode::Isoenergetic, Mode::FixedCalabi] {
                    let r = twist_report(&frame, mode);
                    println!("{} det {:.6e} cond {:.6e}", mode_name(mode), r.determinant, r.condition);
                    for row in r.matrix.row_iter() {
                        println!("  {}", row.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(" "));
                    }
                }
            } else {
                println!("err {:.6e}", flows.torus_error(st));
                println!("err_W {:.6e}", flows.bundle_error(st));
                println!("reduction_residual {:.6e}", reduction_residual(&frame, &flows));
                println!("symplecticity_defect {:.6e}", frame.symplecticity_defect);
                println!("lagrangian_defect {:.6e}", frame.lagrangian_defect);
                println!("s1_symmetry_defect {:.6e}", frame.s1_symmetry_defect);
            }
        }
        _ => unreachable!(),
    }
    Ok(())
}

pub fn index(dir: &Path) -> Result<(), Failure> {
    if !dir.is_dir() {
        return Err(Error::Io(std::io::Error::new(std::io::ErrorKind::NotFound, format!("{} is not a directory", dir.display()))).into());
    }
    let entries = persistence::write_index(dir)?;
    print!("{}", persistence::format_index(&entries));
    Ok(())
}
