//! Batch front end for the `bdcat` library: read a TOML run configuration,
//! apply flag overrides, dispatch to a subcommand and emit JSON or CSV.

pub mod config;
mod run;

use std::path::PathBuf;

use clap::{Parser, Subcommand};
use thiserror::Error;

pub use config::{parse_config, Command, ConfigError, Format, RunConfig};
pub use run::{execute, Output};

/// Process exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exit {
    Ok = 0,
    Input = 1,
    NoConvergence = 2,
    IdentityFailure = 3,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Core(#[from] bdcat::Error),
}

impl CliError {
    pub fn exit(&self) -> Exit {
        use bdcat::Error as E;
        match self {
            CliError::Usage(_) | CliError::Io { .. } | CliError::Config(_) => Exit::Input,
            CliError::Core(e) => match e {
                E::NoConvergence { .. }
                | E::QuadratureNoConvergence { .. }
                | E::SingularSystem(_)
                | E::DegenerateDenominator(_)
                | E::Truncation(_)
                | E::HypothesisViolated(_) => Exit::NoConvergence,
                E::Spec(_)
                | E::Validation { .. }
                | E::Range { .. }
                | E::NotIrreducible(..)
                | E::NotMonotone { .. } => Exit::Input,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "bdcat",
    version,
    about = "Birth-death processes with catastrophes: exact solves, duality checks and simulation"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Sub>,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Absorption probabilities b of the killed process.
    SolveB,
    /// Stationary tails a of the catastrophe process.
    SolveA,
    /// Stationary distribution of the catastrophe process.
    Stationary,
    /// Siegmund dual generator of X or Z.
    Dual,
    /// Transient duality check for (X, X*) and (Z, Z*).
    VerifyDuality,
    /// Both directions of the b/a correspondence against direct solves.
    VerifyTheorem,
    /// Monte Carlo absorption or stationary estimates.
    Simulate,
    /// Monte Carlo excursion statistics at one level.
    Excursions,
    /// Finite Moran tables and identity report.
    Moran,
    /// Diffusion-limit tables and identity report.
    Diffusion,
}

impl From<&Sub> for Command {
    fn from(s: &Sub) -> Self {
        match s {
            Sub::SolveB => Command::SolveB,
            Sub::SolveA => Command::SolveA,
            Sub::Stationary => Command::Stationary,
            Sub::Dual => Command::Dual,
            Sub::VerifyDuality => Command::VerifyDuality,
            Sub::VerifyTheorem => Command::VerifyTheorem,
            Sub::Simulate => Command::Simulate,
            Sub::Excursions => Command::Excursions,
            Sub::Moran => Command::Moran,
            Sub::Diffusion => Command::Diffusion,
        }
    }
}

/// Flags shared by all subcommands; they override the configuration file.
#[derive(Debug, Default, clap::Args)]
pub struct Flags {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output file (standard output when absent).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub replicates: Option<usize>,
    /// Solver tolerance.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Truncation level for infinite schedules.
    #[arg(long, global = true)]
    pub trunc: Option<usize>,
    /// Use the unshifted summation range in the ancestral-type probabilities.
    #[arg(long, global = true)]
    pub unshifted_sums: bool,
    /// Warn about unknown configuration keys instead of failing.
    #[arg(long, global = true)]
    pub lenient: bool,
    /// Level n for `excursions`.
    #[arg(long, global = true)]
    pub level: Option<usize>,
    /// Initial state for `simulate`.
    #[arg(long, global = true)]
    pub init: Option<usize>,
    /// Largest index for `diffusion`.
    #[arg(long, global = true)]
    pub imax: Option<usize>,
    /// Include per-pair details in duality reports.
    #[arg(long, global = true)]
    pub verbose: bool,
    /// Write line-delimited path logs for the first replicates of `simulate`.
    #[arg(long, global = true)]
    pub event_log: Option<PathBuf>,
}

/// Parses the configuration named by the flags and applies the overrides.
pub fn load(cli: &Cli) -> Result<(RunConfig, Vec<String>), CliError> {
    let f = &cli.flags;
    let path = f
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config PATH is required".into()))?;
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let (raw, warnings) = config::parse_raw(&text, f.lenient)?;
    let command = cli
        .command
        .as_ref()
        .map(Command::from)
        .or(raw.command)
        .ok_or_else(|| {
            CliError::Usage("no subcommand given and none set in the configuration".into())
        })?;
    let mut raw = raw;
    if f.trunc.is_some() {
        raw.solver.trunc = f.trunc;
    }
    if f.tol.is_some() {
        raw.solver.tol = f.tol;
    }
    let sim = raw.simulation.get_or_insert_with(Default::default);
    if let Some(seed) = f.seed {
        sim.seed = seed;
    }
    if let Some(r) = f.replicates {
        sim.replicates = r;
    }
    let o = &mut raw.options;
    o.level = f.level.or(o.level);
    o.init = f.init.or(o.init);
    o.imax = f.imax.or(o.imax);
    if f.verbose {
        o.verbose = Some(true);
    }
    if f.unshifted_sums {
        o.unshifted_sums = Some(true);
    }
    if f.format.is_some() {
        raw.format = f.format;
    }
    if f.out.is_some() {
        raw.out = f.out.clone();
    }
    Ok((raw.resolve(command)?, warnings))
}

/// Runs one invocation and returns the exit code, writing diagnostics to
/// standard error.
pub fn main_with_args<I, T>(args: I) -> Exit
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                Exit::Input
            } else {
                Exit::Ok
            };
            let _ = e.print();
            return code;
        }
    };
    let result = load(&cli).and_then(|(cfg, warnings)| {
        for w in warnings {
            eprintln!("warning: unknown key `{w}` ignored");
        }
        let out = execute(&cfg, cli.flags.event_log.as_deref())?;
        emit(cfg.out.as_deref(), &out.text)?;
        Ok(out)
    });
    match result {
        Ok(out) => {
            if let Some(note) = &out.diagnostic {
                eprintln!("{note}");
            }
            out.exit
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit()
        }
    }
}

fn emit(path: Option<&std::path::Path>, text: &str) -> Result<(), CliError> {
    use std::io::Write;
    match path {
        Some(p) => std::fs::write(p, text).map_err(|source| CliError::Io {
            path: p.display().to_string(),
            source,
        }),
        None => std::io::stdout()
            .lock()
            .write_all(text.as_bytes())
            .map_err(|source| CliError::Io {
                path: "<stdout>".into(),
                source,
            }),
    }
}
