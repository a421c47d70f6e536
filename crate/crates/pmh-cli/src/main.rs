//! Command line frontend.
//!
//! Four subcommands drive the library: `effective-flux` tabulates the
//! homogenized flux of a medium, `solve` runs one heterogeneous trajectory,
//! `homogenize` performs the scale sweep with the convergence report, and
//! `kinetic-check` verifies the defect bound and the weak-form residuals on
//! a single run.
//!
//! All physical parameters come from a flat `key = value` config file
//! (`--config`); the flags only control where artifacts go and how the
//! process runs. Exit codes: 0 success, 2 configuration error, 3 numerical
//! failure (including non-convergence), 4 a property check failed, 1 i/o or
//! internal error.

mod build;
mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::CmdOutcome;
use config::RawConfig;
use pmh_core::Error;

#[derive(Parser)]
#[command(name = "pmh", version, about = "porous-medium homogenization toolkit")]
struct Cli {
    /// Flat key=value config file; required by every subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory artifacts are written into (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,

    /// Worker threads for ensemble sweeps; falls back to PMH_THREADS, then
    /// to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Also write an SVG convergence plot (homogenize only).
    #[arg(long, global = true)]
    plot: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate the effective flux and check its structure.
    EffectiveFlux,
    /// Run one heterogeneous trajectory and write it as CSV.
    Solve,
    /// Scale sweep: error versus oscillation scale, with pass/fail trend.
    Homogenize,
    /// Defect-measure bound and weak-form residuals on one run.
    KineticCheck,
}

fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>, Error> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var("PMH_THREADS") {
        Ok(text) => {
            let n: usize = text
                .trim()
                .parse()
                .map_err(|_| Error::config(format!("PMH_THREADS must be an integer, got {text:?}")))?;
            Ok(Some(n))
        }
        Err(_) => Ok(None),
    }
}

fn run(cli: &Cli) -> Result<CmdOutcome, Error> {
    if let Some(n) = resolve_threads(cli.threads)? {
        if n == 0 {
            return Err(Error::config("thread count must be at least 1"));
        }
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            log::warn!("thread pool already initialized; --threads ignored");
        }
    }

    let config_path = cli
        .config
        .as_ref()
        .ok_or_else(|| Error::config("--config <file> is required"))?;
    let cfg = RawConfig::load(config_path)?;

    std::fs::create_dir_all(&cli.out)?;

    match cli.command {
        Command::EffectiveFlux => commands::cmd_effective_flux(&cfg, &cli.out),
        Command::Solve => commands::cmd_solve(&cfg, &cli.out),
        Command::Homogenize => commands::cmd_homogenize(&cfg, &cli.out, cli.plot),
        Command::KineticCheck => commands::cmd_kinetic_check(&cfg, &cli.out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(CmdOutcome::Ok) => ExitCode::SUCCESS,
        Ok(CmdOutcome::CheckFailed) => ExitCode::from(4),
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err {
                Error::Config(_) => 2,
                Error::NonConvergence { .. } | Error::Numerics(_) => 3,
                Error::Io(_) | Error::Internal(_) => 1,
            };
            ExitCode::from(code)
        }
    }
}
