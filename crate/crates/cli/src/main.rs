//! `swarmflow`: experiment runner for swarm gradient dynamics.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 numerical
//! abort, 4 failed `--assert`.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use config::{parse_value, ExperimentConfig};
use output::OutDir;

#[derive(Debug)]
pub struct ConfigError {
    pub message: String,
}

impl ConfigError {
    pub fn new(message: impl Into<String>) -> Self {
        Self {
            message: message.into(),
        }
    }
}

/// A failure with its exit code.
#[derive(Debug)]
pub struct Failure {
    kind: &'static str,
    message: String,
    code: u8,
}

impl Failure {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            kind: "config",
            message: message.into(),
            code: 2,
        }
    }

    pub fn io(path: &Path, err: std::io::Error) -> Self {
        Self {
            kind: "io",
            message: format!("{}: {err}", path.display()),
            code: 1,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::config(e.message)
    }
}

impl From<swarmflow::Error> for Failure {
    fn from(e: swarmflow::Error) -> Self {
        use swarmflow::Error::*;
        let config = matches!(e, InvalidParameter { .. } | UnknownLandscape(_) | Unsupported(_));
        Self {
            kind: if config { "config" } else { "numerical" },
            message: e.to_string(),
            code: if config { 2 } else { 3 },
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "swarmflow", version, about = "Swarm gradient dynamics experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat JSON object of dotted keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Base seed (`run.seed`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override any config key, e.g. `--set grid.n=4096`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,

    /// `landscape.name`.
    #[arg(long, global = true)]
    landscape: Option<String>,
    /// `potential.m`.
    #[arg(long, global = true)]
    m: Option<f64>,
    /// Constant schedule at this beta.
    #[arg(long, global = true, alias = "fixed-beta")]
    beta: Option<f64>,
    /// `schedule.kind`: constant, power or inverse_gamma.
    #[arg(long, global = true)]
    schedule: Option<String>,
    /// `schedule.k`.
    #[arg(long, global = true)]
    k: Option<f64>,
    /// `run.t_end`.
    #[arg(long = "t-end", global = true)]
    t_end: Option<f64>,
    /// `grid.n`.
    #[arg(long = "grid-n", global = true)]
    grid_n: Option<u64>,
    /// `swarm.n`.
    #[arg(long = "N", global = true)]
    particles: Option<u64>,
    /// `swarm.h`.
    #[arg(long, global = true)]
    h: Option<f64>,
    /// `swarm.dt`.
    #[arg(long, global = true)]
    dt: Option<f64>,
    /// `run.seeds`: number of consecutive seeds.
    #[arg(long, global = true)]
    seeds: Option<u64>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Stationary density on a grid.
    Stationary,
    /// Finite-volume evolution.
    Pde,
    /// Particle simulation.
    Swarm,
    /// Functional-inequality sweep over random densities.
    CheckFi {
        /// Exit with code 4 unless every check passes.
        #[arg(long)]
        assert: bool,
    },
    /// Transport-inequality sweep over random densities.
    Talagrand,
    /// Lyapunov ODE bound.
    Lyapunov,
    /// Checks a schedule against the convergence conditions.
    ScheduleValidate {
        /// Exit with code 4 when the verdict is a failure.
        #[arg(long)]
        assert: bool,
    },
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Stationary => "stationary",
            Command::Pde => "pde",
            Command::Swarm => "swarm",
            Command::CheckFi { .. } => "check-fi",
            Command::Talagrand => "talagrand",
            Command::Lyapunov => "lyapunov",
            Command::ScheduleValidate { .. } => "schedule-validate",
        }
    }
}

fn overrides(cli: &Cli) -> Result<Vec<(String, Value)>, Failure> {
    let mut pairs = match &cli.config {
        Some(path) => ExperimentConfig::read_file(path)?,
        None => Vec::new(),
    };
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        pairs.push((k.trim().to_string(), parse_value(v.trim())));
    }
    let mut flag = |k: &str, v: Value| pairs.push((k.to_string(), v));
    if let Some(v) = &cli.landscape {
        flag("landscape.name", json!(v));
    }
    if let Some(v) = cli.m {
        flag("potential.m", json!(v));
    }
    if let Some(v) = cli.beta {
        flag("schedule.kind", json!("constant"));
        flag("schedule.beta", json!(v));
    }
    if let Some(v) = &cli.schedule {
        flag("schedule.kind", json!(v));
    }
    if let Some(v) = cli.k {
        flag("schedule.k", json!(v));
    }
    if let Some(v) = cli.t_end {
        flag("run.t_end", json!(v));
    }
    if let Some(v) = cli.grid_n {
        flag("grid.n", json!(v));
    }
    if let Some(v) = cli.particles {
        flag("swarm.n", json!(v));
    }
    if let Some(v) = cli.h {
        flag("swarm.h", json!(v));
    }
    if let Some(v) = cli.dt {
        flag("swarm.dt", json!(v));
    }
    if let Some(v) = cli.seeds {
        flag("run.seeds", json!(v));
    }
    if let Some(v) = cli.seed {
        flag("run.seed", json!(v));
    }
    Ok(pairs)
}

/// Runs the subcommand; `Ok(false)` means a failed `--assert`.
fn execute(cli: &Cli, out: &mut OutDir, started: Instant) -> Result<bool, Failure> {
    let config = ExperimentConfig::build(overrides(cli)?)?;
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::config(format!("--threads: {e}")))?;
    }
    let (seeds, ok) = match cli.command {
        Command::Stationary => (commands::stationary(&config, out)?, true),
        Command::Pde => (commands::pde(&config, out)?, true),
        Command::Swarm => (commands::swarm(&config, out)?, true),
        Command::CheckFi { assert } => {
            let (seeds, ok) = commands::check_fi(&config, out)?;
            (seeds, ok || !assert)
        }
        Command::Talagrand => (commands::talagrand(&config, out)?, true),
        Command::Lyapunov => (commands::lyapunov(&config, out)?, true),
        Command::ScheduleValidate { assert } => {
            let ok = commands::schedule_validate(&config, out)?;
            (Vec::new(), ok || !assert)
        }
    };
    let manifest = json!({
        "subcommand": cli.command.name(),
        "version": env!("CARGO_PKG_VERSION"),
        "config": config.to_json(),
        "seeds": seeds,
        "files": out.files(),
        "threads": rayon::current_num_threads(),
        "wall_time_s": started.elapsed().as_secs_f64(),
    });
    out.json("manifest.json", &manifest)?;
    Ok(ok)
}

fn main() -> ExitCode {
    let started = Instant::now();
    let cli = Cli::parse();
    let result = OutDir::create(&cli.out).and_then(|mut out| {
        let r = execute(&cli, &mut out, started);
        if let Err(f) = &r {
            let record = json!({
                "subcommand": cli.command.name(),
                "kind": f.kind,
                "message": f.message,
                "exit_code": f.code,
            });
            let _ = out.json("error.json", &record);
        }
        r
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("swarmflow: assertion failed");
            ExitCode::from(4)
        }
        Err(f) => {
            eprintln!("swarmflow: {} error: {}", f.kind, f.message);
            ExitCode::from(f.code)
        }
    }
}
