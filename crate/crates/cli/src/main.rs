//! `tori`: seed, refine and continue invariant tori of the Earth-Moon RTBP,
//! and post-process the stored records.
//!
//! Exit status: 0 success, 2 configuration error, 3 numerical failure,
//! 4 I/O or record failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{ConfigError, RunConfig, CONFIG_ENV};
use tori_core::ErrorClass;

#[derive(Parser, Debug)]
#[command(name = "tori", version, about = "Invariant 2-tori of the spatial RTBP via flow-map multiple shooting")]
struct Cli {
    /// Configuration file (`key = value` lines). Defaults to $TORI_CONFIG.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads for the parallel integrations.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Validate the configuration and inputs, print the resolved values and stop.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Extra `key=value` overrides, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Increase log verbosity.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default)]
struct SeedArgs {
    /// Lyapunov family: vertical or planar.
    #[arg(long)]
    family: Option<String>,
    /// Target normal rotation number of the periodic orbit.
    #[arg(long)]
    rho: Option<String>,
    /// Amplitude of the linear torus seed.
    #[arg(long)]
    amp: Option<String>,
    /// Number of shooting legs.
    #[arg(long)]
    legs: Option<String>,
    /// Grid size N on each leg's curve.
    #[arg(long)]
    grid: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compute a Lyapunov orbit, seed a torus around it and refine it.
    Seed {
        #[command(flatten)]
        seed: SeedArgs,
        /// Refinement mode: isochronous, isoenergetic or fixed-calabi.
        #[arg(long)]
        mode: Option<String>,
        /// Family label stored in the record.
        #[arg(long)]
        tag: Option<String>,
        /// Output record.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Refine a stored torus.
    Refine {
        /// Stored torus record.
        input: PathBuf,
        /// Refinement mode: isochronous, isoenergetic or fixed-calabi.
        #[arg(long)]
        mode: Option<String>,
        /// Output record.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Continue a family from a stored torus into a directory of records.
    Continue {
        /// Starting record (not needed with --resume).
        input: Option<PathBuf>,
        /// Family directory; must be empty unless resuming.
        #[arg(long)]
        dir: PathBuf,
        /// Continuation parameter: T, h or omega.
        #[arg(long)]
        param: Option<String>,
        /// Stop after this many records.
        #[arg(long)]
        max_tori: Option<String>,
        /// Family label stored in the records.
        #[arg(long)]
        tag: Option<String>,
        /// Continue from the last record in the directory.
        #[arg(long)]
        resume: bool,
    },
    /// Print the observables of a stored torus.
    Observe {
        /// Stored torus record.
        input: PathBuf,
    },
    /// Sample the 2D torus and write it as a text table.
    ExportSurface {
        /// Stored torus record.
        input: PathBuf,
        /// Samples along the first angle.
        #[arg(long)]
        n1: Option<String>,
        /// Samples along the second angle.
        #[arg(long)]
        n2: Option<String>,
        /// Output table.
        #[arg(long, short)]
        out: PathBuf,
    },
    /// Diagnostics: eta3-scaling (⟨η³⟩ against perturbation size), twist, frame.
    Diagnose {
        /// Stored torus record.
        input: PathBuf,
        /// One of eta3-scaling, twist or frame.
        #[arg(long, default_value = "eta3-scaling")]
        kind: String,
    },
    /// Regenerate the index of a family directory.
    Index {
        /// Family directory.
        dir: PathBuf,
    },
}

/// Failure with its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure { code: 2, message: format!("configuration error: {e}") }
    }
}

impl From<tori_core::Error> for Failure {
    fn from(e: tori_core::Error) -> Self {
        let code = match e.class() {
            ErrorClass::Input => 2,
            ErrorClass::Numerical => 3,
            ErrorClass::Io => 4,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: 4, message: format!("i/o error: {e}") }
    }
}

fn set_opt(cfg: &mut RunConfig, key: &str, v: &Option<String>) -> Result<(), ConfigError> {
    match v {
        Some(v) => cfg.set(key, v),
        None => Ok(()),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig, ConfigError> {
    let mut cfg = RunConfig::default();
    let path = cli.config.clone().or_else(|| std::env::var_os(CONFIG_ENV).map(PathBuf::from));
    if let Some(p) = path {
        cfg.apply_file(&p)?;
    }
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| ConfigError(format!("--set expects KEY=VALUE, got '{kv}'")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(t) = cli.threads {
        cfg.set("threads", &t.to_string())?;
    }
    match &cli.command {
        Command::Seed { seed, mode, tag, .. } => {
            set_opt(&mut cfg, "family", &seed.family)?;
            set_opt(&mut cfg, "rho", &seed.rho)?;
            set_opt(&mut cfg, "amp", &seed.amp)?;
            set_opt(&mut cfg, "legs", &seed.legs)?;
            set_opt(&mut cfg, "grid", &seed.grid)?;
            set_opt(&mut cfg, "mode", mode)?;
            set_opt(&mut cfg, "tag", tag)?;
        }
        Command::Refine { mode, .. } => set_opt(&mut cfg, "mode", mode)?,
        Command::Continue { param, max_tori, tag, .. } => {
            set_opt(&mut cfg, "param", param)?;
            set_opt(&mut cfg, "max_tori", max_tori)?;
            set_opt(&mut cfg, "tag", tag)?;
        }
        Command::ExportSurface { n1, n2, .. } => {
            set_opt(&mut cfg, "n1", n1)?;
            set_opt(&mut cfg, "n2", n2)?;
        }
        Command::Observe { .. } | Command::Diagnose { .. } | Command::Index { .. } => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = load_config(&cli)?;
    if let Some(t) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Failure { code: 2, message: format!("thread pool: {e}") })?;
    }
    if cli.dry_run {
        commands::dry_run(&cfg, &cli.command)?;
        print!("{}", cfg.dump());
        println!("dry run: configuration valid");
        return Ok(());
    }
    match cli.command {
        Command::Seed { out, .. } => commands::seed(&cfg, &out),
        Command::Refine { input, out, .. } => commands::refine(&cfg, &input, &out),
        Command::Continue { input, dir, resume, .. } => commands::continue_family(&cfg, input.as_deref(), &dir, resume),
        Command::Observe { input } => commands::observe(&cfg, &input),
        Command::ExportSurface { input, out, .. } => commands::export_surface(&cfg, &input, &out),
        Command::Diagnose { input, kind } => commands::diagnose(&cfg, &input, &kind),
        Command::Index { dir } => commands::index(&dir),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("tori: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
