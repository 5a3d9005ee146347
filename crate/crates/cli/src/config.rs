//! `key = value` run configuration.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use tori_core::continuation::{ContinuationConfig, Parameter};
use tori_core::newton::{Mode, NewtonConfig};
use tori_core::observables::{Generator, ObservableOptions};
use tori_core::seeds::{PoConfig, PoFamily};

/// Environment variable naming the default configuration file.
pub const CONFIG_ENV: &str = "TORI_CONFIG";

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub mu: f64,
    pub newton: NewtonConfig,
    pub cont: ContinuationConfig,
    pub flow_samples: usize,
    pub po_family: PoFamily,
    pub rho: Option<f64>,
    pub amp: f64,
    pub legs: usize,
    pub grid: usize,
    pub mode: Mode,
    pub param: Parameter,
    pub tag: Option<String>,
    pub n1: usize,
    pub n2: usize,
    pub rng_seed: u64,
    pub threads: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let newton = NewtonConfig::default();
        Self {
            mu: tori_core::symplectic_model::EARTH_MOON_MU,
            newton,
            cont: ContinuationConfig { newton, ..Default::default() },
            flow_samples: ObservableOptions::default().flow_samples,
            po_family: PoFamily::Vertical,
            rho: None,
            amp: 1e-3,
            legs: 4,
            grid: 32,
            mode: Mode::FixedCalabi,
            param: Parameter::Period,
            tag: None,
            n1: 128,
            n2: 128,
            rng_seed: 1,
            threads: None,
        }
    }
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, ConfigError> {
    v.parse().map_err(|_| ConfigError(format!("bad value for '{key}': '{v}'")))
}

pub fn parse_mode(v: &str) -> Result<Mode, ConfigError> {
    match v {
        "isochronous" => Ok(Mode::Isochronous),
        "isoenergetic" => Ok(Mode::Isoenergetic),
        "fixed-calabi" => Ok(Mode::FixedCalabi),
        _ => Err(ConfigError(format!("unknown mode '{v}' (isochronous, isoenergetic, fixed-calabi)"))),
    }
}

pub fn mode_name(m: Mode) -> &'static str {
    match m {
        Mode::Isochronous => "isochronous",
        Mode::Isoenergetic => "isoenergetic",
        Mode::FixedCalabi => "fixed-calabi",
    }
}

/// Every accepted key, in the order used by [`RunConfig::dump`].
pub const KEYS: &[&str] = &[
    "mu",
    "rtol",
    "atol",
    "h_init",
    "h_min",
    "max_steps",
    "eps",
    "eps_w",
    "max_iters",
    "divisor_floor",
    "twist_cond_max",
    "tail_divisor",
    "hyperbolicity_delta",
    "alpha",
    "alpha_min",
    "alpha_max",
    "eps1",
    "eps2",
    "n_des",
    "n_alpha",
    "n_min",
    "n_max",
    "max_tori",
    "calabi_floor",
    "param_min",
    "param_max",
    "noble_tol",
    "max_correction",
    "flow_samples",
    "family",
    "rho",
    "amp",
    "legs",
    "grid",
    "mode",
    "param",
    "tag",
    "n1",
    "n2",
    "rng_seed",
    "threads",
];

impl RunConfig {
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), ConfigError> {
        let nw = &mut self.newton;
        let c = &mut self.cont;
        match key {
            "mu" => self.mu = num(key, v)?,
            "rtol" => nw.flow.rtol = num(key, v)?,
            "atol" => nw.flow.atol = num(key, v)?,
            "h_init" => nw.flow.h_init = num(key, v)?,
            "h_min" => nw.flow.h_min = num(key, v)?,
            "max_steps" => nw.flow.max_steps = num(key, v)?,
            "eps" => nw.eps = num(key, v)?,
            "eps_w" => nw.eps_w = num(key, v)?,
            "max_iters" => nw.max_iters = num(key, v)?,
            "divisor_floor" => {
                nw.divisor_floor = num(key, v)?;
                nw.frame.divisor_floor = nw.divisor_floor;
            }
            "twist_cond_max" => nw.twist_cond_max = num(key, v)?,
            "tail_divisor" => nw.tail_divisor = num(key, v)?,
            "hyperbolicity_delta" => nw.hyperbolicity_delta = num(key, v)?,
            "alpha" => c.alpha = num(key, v)?,
            "alpha_min" => c.alpha_min = num(key, v)?,
            "alpha_max" => c.alpha_max = num(key, v)?,
            "eps1" => c.eps1 = num(key, v)?,
            "eps2" => c.eps2 = num(key, v)?,
            "n_des" => c.n_des = num(key, v)?,
            "n_alpha" => c.n_alpha = num(key, v)?,
            "n_min" => c.n_min = num(key, v)?,
            "n_max" => c.n_max = num(key, v)?,
            "max_tori" => c.max_tori = num(key, v)?,
            "calabi_floor" => c.calabi_floor = num(key, v)?,
            "param_min" => c.param_min = num(key, v)?,
            "param_max" => c.param_max = num(key, v)?,
            "noble_tol" => c.noble_tol = num(key, v)?,
            "max_correction" => c.max_correction = num(key, v)?,
            "flow_samples" => self.flow_samples = num(key, v)?,
            "family" => {
                self.po_family = match v {
                    "vertical" => PoFamily::Vertical,
                    "planar" => PoFamily::Planar,
                    _ => return Err(ConfigError(format!("unknown family '{v}' (vertical, planar)"))),
                }
            }
            "rho" => self.rho = Some(num(key, v)?),
            "amp" => self.amp = num(key, v)?,
            "legs" => self.legs = num(key, v)?,
            "grid" => self.grid = num(key, v)?,
            "mode" => self.mode = parse_mode(v)?,
            "param" => self.param = Parameter::parse(v).map_err(|e| ConfigError(e.to_string()))?,
            "tag" => self.tag = Some(v.to_string()),
            "n1" => self.n1 = num(key, v)?,
            "n2" => self.n2 = num(key, v)?,
            "rng_seed" => self.rng_seed = num(key, v)?,
            "threads" => self.threads = Some(num(key, v)?),
            _ => return Err(ConfigError(format!("unknown configuration key '{key}'"))),
        }
        Ok(())
    }

    /// Apply a `key = value` file. Blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str, source: &str) -> Result<(), ConfigError> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| ConfigError(format!("{source}:{}: expected key = value", no + 1)))?;
            self.set(k.trim(), v.trim()).map_err(|e| ConfigError(format!("{source}:{}: {e}", no + 1)))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Cross-field checks run before any computation.
    pub fn validate(&mut self) -> Result<(), ConfigError> {
        self.cont.newton = self.newton;
        let bad = |m: &str| Err(ConfigError(m.to_string()));
        if !(self.mu > 0.0 && self.mu <= 0.5) {
            return bad("mu must lie in (0, 1/2]");
        }
        let f = &self.newton.flow;
        if !(f.rtol > 0.0 && f.atol > 0.0 && f.h_init > 0.0 && f.h_min > 0.0 && f.max_steps > 0) {
            return bad("integrator tolerances and steps must be positive");
        }
        if !(self.newton.eps > 0.0 && self.newton.eps_w > 0.0) {
            return bad("eps and eps_w must be positive");
        }
        if !self.grid.is_power_of_two() || self.grid < 8 {
            return bad("grid must be a power of two, at least 8");
        }
        if self.legs == 0 {
            return bad("legs must be positive");
        }
        if self.newton.tail_divisor < 2 {
            return bad("tail_divisor must be at least 2");
        }
        if self.flow_samples == 0 || self.n1 == 0 || self.n2 == 0 {
            return bad("sample counts must be positive");
        }
        if self.threads == Some(0) {
            return bad("threads must be positive");
        }
        if let Some(r) = self.rho {
            if !(r > 0.0 && r < 0.5) {
                return bad("rho must lie in (0, 1/2)");
            }
        }
        if let Some(t) = &self.tag {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return bad("tag must be a nonempty word");
            }
        }
        self.cont.validate().map_err(|e| ConfigError(e.to_string()))
    }

    pub fn generator(&self) -> Generator {
        match self.po_family {
            PoFamily::Vertical => Generator::Vertical,
            PoFamily::Planar => Generator::Planar,
        }
    }

    pub fn observable_options(&self) -> ObservableOptions {
        ObservableOptions {
            generator: self.generator(),
            flow_samples: self.flow_samples,
            flow: self.newton.flow,
            frame: self.newton.frame,
        }
    }

    pub fn po_config(&self) -> PoConfig {
        PoConfig { flow: self.newton.flow, ..Default::default() }
    }

    /// Resolved configuration as `key = value` lines.
    pub fn dump(&self) -> String {
        let nw = &self.newton;
        let c = &self.cont;
        let opt = |v: Option<String>| v.unwrap_or_else(|| "-".into());
        let vals: Vec<String> = vec![
            self.mu.to_string(),
            nw.flow.rtol.to_string(),
            nw.flow.atol.to_string(),
            nw.flow.h_init.to_string(),
            nw.flow.h_min.to_string(),
            nw.flow.max_steps.to_string(),
            nw.eps.to_string(),
            nw.eps_w.to_string(),
            nw.max_iters.to_string(),
            nw.divisor_floor.to_string(),
            nw.twist_cond_max.to_string(),
            nw.tail_divisor.to_string(),
            nw.hyperbolicity_delta.to_string(),
            c.alpha.to_string(),
            c.alpha_min.to_string(),
            c.alpha_max.to_string(),
            c.eps1.to_string(),
            c.eps2.to_string(),
            c.n_des.to_string(),
            c.n_alpha.to_string(),
            c.n_min.to_string(),
            c.n_max.to_string(),
            c.max_tori.to_string(),
            c.calabi_floor.to_string(),
            c.param_min.to_string(),
            c.param_max.to_string(),
            c.noble_tol.to_string(),
            c.max_correction.to_string(),
            self.flow_samples.to_string(),
            self.generator().name().to_string(),
            opt(self.rho.map(|r| r.to_string())),
            self.amp.to_string(),
            self.legs.to_string(),
            self.grid.to_string(),
            mode_name(self.mode).to_string(),
            self.param.name().to_string(),
            opt(self.tag.clone()),
            self.n1.to_string(),
            self.n2.to_string(),
            self.rng_seed.to_string(),
            opt(self.threads.map(|t| t.to_string())),
        ];
        let mut s = String::new();
        for (k, v) in KEYS.iter().zip(vals) {
            let _ = writeln!(s, "{k} = {v}");
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let mut c = RunConfig::default();
        let e = c.apply_text("eps = 1e-8\nfoo = 1\n", "t").unwrap_err();
        assert!(e.0.contains("t:2") && e.0.contains("foo"), "{e}");
    }

    #[test]
    fn comments_and_blanks_are_skipped() {
        let mut c = RunConfig::default();
        c.apply_text("# header\n\n rho = 0.031865  # target\nmode=isoenergetic\n", "t").unwrap();
        assert_eq!(c.rho, Some(0.031865));
        assert_eq!(c.mode, Mode::Isoenergetic);
    }

    #[test]
    fn dump_round_trips() {
        let mut c = RunConfig::default();
        c.set("rho", "0.05").unwrap();
        c.set("tag", "fam").unwrap();
        c.set("threads", "2").unwrap();
        let text = c.dump();
        let mut d = RunConfig::default();
        d.apply_text(&text, "dump").unwrap();
        assert_eq!(d.dump(), text);
    }

    #[test]
    fn every_key_is_settable() {
        assert_eq!(KEYS.len(), RunConfig::default().dump().lines().count());
        for k in KEYS {
            let mut c = RunConfig::default();
            let v = match *k {
                "family" => "planar",
                "mode" => "isochronous",
                "param" => "h",
                "tag" => "x",
                _ => "3",
            };
            c.set(k, v).unwrap_or_else(|e| panic!("{k}: {e}"));
        }
    }

    #[test]
    fn validation_catches_bad_grid() {
        let mut c = RunConfig::default();
        c.set("grid", "48").unwrap();
        assert!(c.validate().is_err());
    }
}
