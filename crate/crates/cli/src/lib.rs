//! Experiment runner for the homlab solvers.
//!
//! Numerics come from a TOML config; flags select the subcommand, the config
//! path and the determinism mode. Every run writes CSV tables and a JSON
//! manifest into `<output root>/<output_dir>/<subcommand>`, where the output
//! root is `$HOMLAB_OUTPUT_ROOT` or the working directory.
//!
//! Exit codes: 0 success, 1 a `report` check failed, 2 invalid config or
//! usage, 3 solver or I/O failure, 4 manifest missing or corrupt.

pub mod commands;
pub mod config;
pub mod manifest;

use clap::{Parser, Subcommand};
use homlab::ExecPolicy;
use std::path::{Path, PathBuf};
use thiserror::Error;

use commands::{eps_tag, Command, Outcome, RunDir};
use config::ExperimentConfig;
use manifest::{Hypotheses, RunManifest, RunSummary};

pub const OUTPUT_ROOT_ENV: &str = "HOMLAB_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("solver failure: {0}")]
    Solver(String),
    #[error("i/o error at {path}: {reason}")]
    Io { path: String, reason: String },
    #[error("manifest missing or corrupt: {0}")]
    Manifest(String),
}

impl CliError {
    pub fn config(field: &str, reason: String) -> Self {
        CliError::Config {
            field: field.to_string(),
            reason,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            reason: e.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Solver(_) | CliError::Io { .. } => 3,
            CliError::Manifest(_) => 4,
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "homlab", version, about = "Perforated strain-gradient viscoelasticity experiments")]
pub struct Cli {
    /// Force deterministic reductions regardless of the config.
    #[arg(long, global = true, conflicts_with = "nondeterministic")]
    pub deterministic: bool,
    /// Allow thread-count dependent reductions.
    #[arg(long, global = true)]
    pub nondeterministic: bool,
    #[command(subcommand)]
    pub action: Action,
}

#[derive(Subcommand, Debug)]
pub enum Action {
    /// Heterogeneous trajectory on the perforated domain at the first eps.
    Micro { config: PathBuf },
    /// Homogenized trajectory on the unit square.
    Macro { config: PathBuf },
    /// Cell problems at random second gradients.
    Cell { config: PathBuf },
    /// Korn and Poincaré constants at the first eps.
    Korn { config: PathBuf },
    /// Extension norm ratios at the first eps.
    Extend { config: PathBuf },
    /// Unfolding isometry at the first eps.
    Unfold { config: PathBuf },
    /// Micro runs over every eps against one macro run.
    Compare { config: PathBuf },
    /// Runs an eps-dependent subcommand over every eps.
    Sweep { command: Command, config: PathBuf },
    /// Re-checks a manifest and prints PASS/FAIL lines.
    Report { manifest: PathBuf },
}

/// Resolves the run directory of `name` for `cfg`.
pub fn output_dir(cfg: &ExperimentConfig, name: &str) -> PathBuf {
    let root = std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from).unwrap_or_default();
    root.join(&cfg.output_dir).join(name)
}

fn policy(cfg: &ExperimentConfig, cli_override: Option<bool>) -> ExecPolicy {
    ExecPolicy {
        deterministic: cli_override.unwrap_or(cfg.deterministic),
        ..ExecPolicy::default()
    }
}

/// Runs `cmd` (or a sweep of it) and writes its manifest into `dir`.
pub fn execute(cmd: Command, sweep: bool, cfg: &ExperimentConfig, deterministic: Option<bool>, dir: &Path) -> Result<RunManifest, CliError> {
    let x = cfg.validate()?;
    if sweep && !cmd.per_eps() {
        return Err(CliError::config(
            "subcommand",
            format!("sweep applies to micro, korn, extend and unfold, not {}", cmd.name()),
        ));
    }
    let pol = policy(cfg, deterministic);
    let mut out = RunDir::create(dir.to_path_buf())?;
    let mut o = Outcome::default();
    if sweep {
        for &eps in &x.eps {
            let part = commands::run_at(cmd, &x, eps, pol, &mut out, &format!("{}/", eps_tag(eps)))?;
            o.runs.extend(part.runs);
            o.checks.extend(part.checks);
        }
        let (checks, metrics) = commands::sweep_checks(cmd, &o.runs);
        o.checks.extend(checks);
        o.runs.push(RunSummary {
            label: "sweep".into(),
            eps: None,
            metrics,
            tables: Vec::new(),
        });
    } else {
        o = match cmd {
            Command::Macro => commands::macro_run(&x, pol, &mut out, "")?.0,
            Command::Cell => commands::cell(&x, pol, &mut out)?,
            Command::Compare => commands::compare(&x, pol, &mut out)?,
            other => commands::run_at(other, &x, x.eps[0], pol, &mut out, "")?,
        };
    }
    let mut tables = out.tables.clone();
    tables.sort();
    let m = RunManifest {
        tool: "homlab".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        subcommand: if sweep { format!("sweep {}", cmd.name()) } else { cmd.name().into() },
        deterministic: pol.deterministic,
        config: cfg.clone(),
        hypotheses: Hypotheses::of(x.bundle.gradient.p, x.bundle.elastic.q),
        runs: o.runs,
        tables,
        checks: o.checks,
    };
    m.write(dir)?;
    Ok(m)
}

fn run_action(cli: Cli) -> Result<i32, CliError> {
    let det = match (cli.deterministic, cli.nondeterministic) {
        (true, _) => Some(true),
        (_, true) => Some(false),
        _ => None,
    };
    let (cmd, sweep, path) = match cli.action {
        Action::Report { manifest } => {
            let r = manifest::report(&manifest)?;
            print!("{}", r.text);
            println!("{} failure{}", r.failures, if r.failures == 1 { "" } else { "s" });
            return Ok(if r.failures == 0 { 0 } else { 1 });
        }
        Action::Micro { config } => (Command::Micro, false, config),
        Action::Macro { config } => (Command::Macro, false, config),
        Action::Cell { config } => (Command::Cell, false, config),
        Action::Korn { config } => (Command::Korn, false, config),
        Action::Extend { config } => (Command::Extend, false, config),
        Action::Unfold { config } => (Command::Unfold, false, config),
        Action::Compare { config } => (Command::Compare, false, config),
        Action::Sweep { command, config } => (command, true, config),
    };
    let cfg = ExperimentConfig::load(&path)?;
    let name = if sweep { format!("sweep-{}", cmd.name()) } else { cmd.name().to_string() };
    let dir = output_dir(&cfg, &name);
    let m = execute(cmd, sweep, &cfg, det, &dir)?;
    let failed = m.checks.iter().filter(|c| !c.passed).count();
    println!(
        "{}: {} run{}, {} check{} ({} failed), manifest {}",
        m.subcommand,
        m.runs.len(),
        if m.runs.len() == 1 { "" } else { "s" },
        m.checks.len(),
        if m.checks.len() == 1 { "" } else { "s" },
        failed,
        dir.join(manifest::MANIFEST_FILE).display()
    );
    Ok(0)
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run_action(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
