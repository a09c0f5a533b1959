//! Run configuration (schema v1) read from TOML.

use std::path::PathBuf;

use bdcat::montecarlo::SimConfig;
use bdcat::popgen::{DiffusionParams, MoranParams};
use bdcat::schedule::{make_schedule_set, ScheduleSet, ScheduleSpec};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    SolveB,
    SolveA,
    Stationary,
    Dual,
    VerifyDuality,
    VerifyTheorem,
    Simulate,
    Excursions,
    Moran,
    Diffusion,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::SolveB => "solve-b",
            Command::SolveA => "solve-a",
            Command::Stationary => "stationary",
            Command::Dual => "dual",
            Command::VerifyDuality => "verify-duality",
            Command::VerifyTheorem => "verify-theorem",
            Command::Simulate => "simulate",
            Command::Excursions => "excursions",
            Command::Moran => "moran",
            Command::Diffusion => "diffusion",
        }
    }

    /// Which parameter block the command reads.
    pub fn input(self) -> Input {
        match self {
            Command::Moran => Input::Moran,
            Command::Diffusion => Input::Diffusion,
            _ => Input::Schedule,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Input {
    Schedule,
    Moran,
    Diffusion,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// Which process the `dual` command dualises.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DualProcess {
    X,
    #[default]
    Z,
}

/// What `simulate` estimates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Estimand {
    #[default]
    Absorption,
    Stationary,
}

/// Which table the `diffusion` command writes as CSV.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DiffusionTable {
    #[default]
    Index,
    Grid,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub tol: Option<f64>,
    pub trunc: Option<usize>,
}

/// Command-specific settings.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Options {
    pub level: Option<usize>,
    pub init: Option<usize>,
    pub times: Option<Vec<f64>>,
    pub imax: Option<usize>,
    pub grid_points: Option<usize>,
    pub process: Option<DualProcess>,
    pub estimate: Option<Estimand>,
    pub table: Option<DiffusionTable>,
    pub stationary_replicates: Option<usize>,
    pub verbose: Option<bool>,
    pub unshifted_sums: Option<bool>,
}

/// The file as written.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RawConfig {
    pub version: Option<u32>,
    pub command: Option<Command>,
    pub format: Option<Format>,
    pub out: Option<PathBuf>,
    pub schedule: Option<ScheduleSpec>,
    pub moran: Option<MoranParams>,
    pub diffusion: Option<DiffusionParams>,
    #[serde(default)]
    pub solver: SolverConfig,
    pub simulation: Option<SimConfig>,
    #[serde(default)]
    pub options: Options,
}

/// A validated configuration: the parameter block is resolved for the command.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub command: Command,
    pub format: Format,
    pub out: Option<PathBuf>,
    pub model: Model,
    pub solver: SolverConfig,
    pub simulation: SimConfig,
    pub options: Options,
}

#[derive(Clone, Debug)]
pub enum Model {
    Schedule(ScheduleSet),
    Moran(MoranParams),
    Diffusion(DiffusionParams),
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid `{path}`: {reason}")]
    Validation { path: String, reason: String },
}

impl ConfigError {
    pub fn invalid(path: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Validation {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

fn line_column(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

/// Parses a configuration file. Unknown keys are errors unless `lenient`, in
/// which case their paths are returned as warnings.
pub fn parse_raw(text: &str, lenient: bool) -> Result<(RawConfig, Vec<String>), ConfigError> {
    let mut unknown = Vec::new();
    let de = toml::Deserializer::new(text);
    let raw: RawConfig =
        serde_ignored::deserialize(de, |path| unknown.push(path.to_string().replace(".?", "")))
            .map_err(|e| {
                let (line, column) = e.span().map_or((0, 0), |s| line_column(text, s.start));
                ConfigError::Parse {
                    line,
                    column,
                    message: e.message().to_string(),
                }
            })?;
    if !unknown.is_empty() && !lenient {
        return Err(ConfigError::invalid(
            unknown[0].clone(),
            "unknown key (pass --lenient to ignore unknown keys)",
        ));
    }
    if let Some(v) = raw.version {
        if v != SCHEMA_VERSION {
            return Err(ConfigError::invalid(
                "version",
                format!("unsupported schema version {v}, expected {SCHEMA_VERSION}"),
            ));
        }
    }
    Ok((raw, unknown))
}

/// Maps a library validation error inside block `block` to a key path.
pub fn core_path(block: &str, e: &bdcat::Error) -> Option<ConfigError> {
    match e {
        bdcat::Error::Spec(key) => Some(ConfigError::invalid(
            format!("{block}.{key}"),
            "missing required key",
        )),
        bdcat::Error::Validation {
            field,
            index,
            reason,
        } => {
            let path = match index {
                Some(i) => format!("{block}.{field}[{i}]"),
                None => format!("{block}.{field}"),
            };
            Some(ConfigError::invalid(path, reason.clone()))
        }
        _ => None,
    }
}

impl RawConfig {
    /// Resolves the model block for `command` and validates simulation settings.
    pub fn resolve(self, command: Command) -> Result<RunConfig, ConfigError> {
        let present: Vec<&str> = [
            ("schedule", self.schedule.is_some()),
            ("moran", self.moran.is_some()),
            ("diffusion", self.diffusion.is_some()),
        ]
        .iter()
        .filter(|(_, p)| *p)
        .map(|(n, _)| *n)
        .collect();
        let wanted = match command.input() {
            Input::Schedule => "schedule",
            Input::Moran => "moran",
            Input::Diffusion => "diffusion",
        };
        if present != [wanted] {
            return Err(ConfigError::invalid(
                wanted,
                format!(
                    "`{}` needs exactly one parameter block, `[{wanted}]`; found {:?}",
                    command.name(),
                    present
                ),
            ));
        }
        let model = match command.input() {
            Input::Schedule => {
                let mut spec = self.schedule.expect("checked above");
                if let Some(t) = self.solver.trunc {
                    spec.truncation = Some(t);
                }
                let set = make_schedule_set(&spec).map_err(|e| {
                    core_path("schedule", &e)
                        .unwrap_or_else(|| ConfigError::invalid("schedule", e.to_string()))
                })?;
                Model::Schedule(set)
            }
            Input::Moran => Model::Moran(self.moran.expect("checked above")),
            Input::Diffusion => Model::Diffusion(self.diffusion.expect("checked above")),
        };
        let simulation = self.simulation.unwrap_or_default();
        simulation.validate().map_err(|e| {
            core_path("simulation", &e)
                .unwrap_or_else(|| ConfigError::invalid("simulation", e.to_string()))
        })?;
        if let Some(tol) = self.solver.tol {
            if !(tol.is_finite() && tol > 0.0) {
                return Err(ConfigError::invalid("solver.tol", "must be finite and > 0"));
            }
        }
        if let Some(times) = &self.options.times {
            if times.is_empty() || times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
                return Err(ConfigError::invalid(
                    "options.times",
                    "must be a non-empty list of finite times ≥ 0",
                ));
            }
        }
        if let Some(g) = self.options.grid_points {
            if g < 2 {
                return Err(ConfigError::invalid(
                    "options.grid_points",
                    "must be at least 2",
                ));
            }
        }
        Ok(RunConfig {
            command,
            format: self.format.unwrap_or_default(),
            out: self.out,
            model,
            solver: self.solver,
            simulation,
            options: self.options,
        })
    }
}

/// Parses and resolves `text` for `command` (or the file's own `command`).
pub fn parse_config(
    text: &str,
    command: Option<Command>,
    lenient: bool,
) -> Result<(RunConfig, Vec<String>), ConfigError> {
    let (raw, warnings) = parse_raw(text, lenient)?;
    let command = command.or(raw.command).ok_or_else(|| {
        ConfigError::invalid("command", "no subcommand given and none set in the file")
    })?;
    Ok((raw.resolve(command)?, warnings))
}

#[cfg(test)]
mod tests {
    use super::*;
    use bdcat::schedule::{Extent, RateSchedule};

    const MINIMAL: &str = r#"
        [schedule]
        extent = 2
        lambda = [1.0]
        mu = [1.0, 1.0]
        kappa = 1.0
    "#;

    #[test]
    fn minimal_inline_arrays() {
        let (cfg, warnings) = parse_config(MINIMAL, Some(Command::SolveB), false).unwrap();
        assert!(warnings.is_empty());
        let expected =
            RateSchedule::from_arrays(Extent::Finite(2), vec![1.0], vec![1.0, 1.0], 1.0).unwrap();
        match cfg.model {
            Model::Schedule(ScheduleSet::Single(s)) => assert_eq!(s, expected),
            other => panic!("{other:?}"),
        }
        assert_eq!(cfg.format, Format::Json);
    }

    #[test]
    fn missing_kappa_names_the_key() {
        let text = MINIMAL.replace("kappa = 1.0", "");
        let err = parse_config(&text, Some(Command::SolveB), false).unwrap_err();
        assert_eq!(
            err,
            ConfigError::Validation {
                path: "schedule.kappa".into(),
                reason: "missing required key".into()
            }
        );
    }

    #[test]
    fn unknown_keys_strict_and_lenient() {
        let text = format!("colour = 3\n{MINIMAL}\nextra = 1\n");
        let err = parse_config(&text, Some(Command::SolveB), false).unwrap_err();
        assert!(
            matches!(err, ConfigError::Validation { ref path, .. } if path == "colour"),
            "{err}"
        );
        let (_, warnings) = parse_config(&text, Some(Command::SolveB), true).unwrap();
        assert_eq!(
            warnings,
            vec!["colour".to_string(), "schedule.extra".to_string()]
        );
    }

    #[test]
    fn unknown_key_inside_parameter_block() {
        let text = "[moran]\nn = 2\ns = 1\nu = 1\nnu0 = 0.5\nsize = 3\n";
        let err = parse_config(text, Some(Command::Moran), false).unwrap_err();
        assert!(
            matches!(err, ConfigError::Validation { ref path, .. } if path == "moran.size"),
            "{err}"
        );
    }

    #[test]
    fn parse_errors_carry_positions() {
        let err =
            parse_config("[schedule]\nextent = = 2\n", Some(Command::SolveB), false).unwrap_err();
        match err {
            ConfigError::Parse { line, column, .. } => assert_eq!((line, column), (2, 10)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn moran_family_expands_to_both_schedules() {
        let text = r#"
            [schedule.family]
            name = "moran"
            n = 4
            s = 1.2
            u = 0.7
            nu0 = 0.3
        "#;
        let (cfg, _) = parse_config(text, Some(Command::SolveB), false).unwrap();
        let p = MoranParams::new(4, 1.2, 0.7, 0.3).unwrap();
        match cfg.model {
            Model::Schedule(ScheduleSet::MoranPair { kasg, pldasg }) => {
                assert_eq!(kasg, p.kasg_schedule().unwrap());
                assert_eq!(pldasg, p.pldasg_schedule().unwrap());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn block_must_match_command() {
        let err = parse_config(MINIMAL, Some(Command::Moran), false).unwrap_err();
        assert!(matches!(err, ConfigError::Validation { ref path, .. } if path == "moran"));
        let both = format!("{MINIMAL}\n[diffusion]\nsigma = 1\ntheta = 1\nnu0 = 0.5\n");
        assert!(parse_config(&both, Some(Command::SolveB), false).is_err());
    }

    #[test]
    fn command_from_file_and_version() {
        let text = format!("version = 1\ncommand = \"solve-a\"\n{MINIMAL}");
        let (cfg, _) = parse_config(&text, None, false).unwrap();
        assert_eq!(cfg.command, Command::SolveA);
        let text = format!("version = 2\n{MINIMAL}");
        assert!(parse_config(&text, Some(Command::SolveA), false).is_err());
        assert!(parse_config(MINIMAL, None, false).is_err());
    }

    #[test]
    fn invalid_rates_have_indexed_paths() {
        let text = MINIMAL.replace("mu = [1.0, 1.0]", "mu = [1.0, -1.0]");
        let err = parse_config(&text, Some(Command::SolveB), false).unwrap_err();
        assert!(
            matches!(err, ConfigError::Validation { ref path, .. } if path == "schedule.mu[2]"),
            "{err}"
        );
    }
}
