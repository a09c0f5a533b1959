//! Subcommand implementations. Each returns the rendered output and the exit
//! code it implies.

use std::io::Write;
use std::path::Path;

use bdcat::duality::{relate_a_from_b, relate_b_from_a, siegmund_dual, verify_duality_with};
use bdcat::generator::{build_generator, Generator, ProcessKind, State};
use bdcat::montecarlo::{
    absorption_replicate_path, detailed_balance_gap, estimate_absorption, estimate_stationary,
    exact_excursion, excursion_statistics, Estimate, SimConfig,
};
use bdcat::popgen::{
    ancestral_type_prob_diffusion, ancestral_type_prob_finite, diffusion_relations,
    finite_relations, moran_forward, SumIndexing,
};
use bdcat::report::{solution_csv, to_csv, to_json, Cell};
use bdcat::schedule::{RateSchedule, ScheduleSet};
use bdcat::solvers::{
    solve_absorption_b, solve_tail_a, stationary_distribution, SolutionVector, DEFAULT_TOL,
};
use serde::Serialize;

use crate::config::{Command, DiffusionTable, DualProcess, Estimand, Format, Model, RunConfig};
use crate::{CliError, Exit};

/// Version tag of the JSON envelope.
pub const JSON_SCHEMA: &str = "bdcat-json v1";

const THEOREM_TOL: f64 = 1e-9;
const DUALITY_TOL: f64 = 1e-8;
const DUALITY_TIMES: [f64; 3] = [0.1, 1.0, 10.0];
const QUADRATURE_TOL: f64 = 1e-12;
const DEFAULT_IMAX: usize = 20;
const DEFAULT_GRID: usize = 101;
const DEFAULT_STATIONARY_REPLICATES: usize = 256;
const EVENT_LOG_PATHS: usize = 100;
/// Monte Carlo checks pass within this many standard errors.
const Z_BAND: f64 = 3.0;
const CHI_SQUARE_LEVEL: f64 = 0.01;

/// Rendered output of one command.
#[derive(Debug)]
pub struct Output {
    pub text: String,
    pub exit: Exit,
    /// Summary line for standard error, if any.
    pub diagnostic: Option<String>,
}

#[derive(Serialize)]
struct Envelope<'a, T: Serialize> {
    schema: &'static str,
    command: &'a str,
    result: &'a T,
}

fn json<T: Serialize>(command: Command, result: &T) -> Result<String, CliError> {
    to_json(&Envelope {
        schema: JSON_SCHEMA,
        command: command.name(),
        result,
    })
    .map_err(|e| CliError::Usage(format!("serialization failed: {e}")))
}

fn ok(text: String) -> Output {
    Output {
        text,
        exit: Exit::Ok,
        diagnostic: None,
    }
}

fn checked(text: String, pass: bool, what: &str) -> Output {
    Output {
        text,
        exit: if pass {
            Exit::Ok
        } else {
            Exit::IdentityFailure
        },
        diagnostic: (!pass).then(|| format!("identity check failed: {what}")),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn state_label(s: State) -> String {
    match s {
        State::Site(i) => i.to_string(),
        State::Cemetery => "cemetery".into(),
    }
}

/// Runs `cfg` and writes path logs to `event_log` when given.
pub fn execute(cfg: &RunConfig, event_log: Option<&Path>) -> Result<Output, CliError> {
    let tol = cfg.solver.tol.unwrap_or(DEFAULT_TOL);
    match (&cfg.model, cfg.command) {
        (Model::Schedule(set), Command::SolveB) => {
            let s = match set {
                ScheduleSet::Single(s) => s,
                ScheduleSet::MoranPair { kasg, .. } => kasg,
            };
            solution(cfg, &solve_absorption_b(s, tol)?)
        }
        (Model::Schedule(set), Command::SolveA) => {
            let s = match set {
                ScheduleSet::Single(s) => s,
                ScheduleSet::MoranPair { pldasg, .. } => pldasg,
            };
            solution(cfg, &solve_tail_a(s, tol)?)
        }
        (Model::Schedule(set), command) => {
            let s = match set {
                ScheduleSet::Single(s) => s,
                ScheduleSet::MoranPair { .. } => {
                    return Err(CliError::Usage(format!(
                        "`{}` needs a single schedule; the `moran` family gives two \
                         (use `moran-kasg` or `moran-pldasg`)",
                        command.name()
                    )))
                }
            };
            match command {
                Command::Stationary => {
                    let z = build_generator(ProcessKind::Z, s)?;
                    solution(cfg, &stationary_distribution(&z, tol)?)
                }
                Command::Dual => dual(cfg, s),
                Command::VerifyDuality => verify_duality_cmd(cfg, s),
                Command::VerifyTheorem => verify_theorem(cfg, s, tol),
                Command::Simulate => simulate(cfg, s, tol, event_log),
                Command::Excursions => excursions(cfg, s),
                _ => unreachable!("resolve() matches blocks to commands"),
            }
        }
        (Model::Moran(p), _) => moran(cfg, p),
        (Model::Diffusion(p), _) => diffusion(cfg, p),
    }
}

fn solution(cfg: &RunConfig, v: &SolutionVector) -> Result<Output, CliError> {
    Ok(ok(match cfg.format {
        Format::Json => json(cfg.command, v)?,
        Format::Csv => solution_csv(v),
    }))
}

fn require_finite(cfg: &RunConfig, s: &RateSchedule) -> Result<(), CliError> {
    if s.extent().is_finite() {
        Ok(())
    } else {
        Err(CliError::Usage(format!(
            "`{}` needs a finite schedule",
            cfg.command.name()
        )))
    }
}

#[derive(Serialize)]
struct Rate {
    from: String,
    to: String,
    rate: f64,
}

#[derive(Serialize)]
struct DualOutput {
    process: &'static str,
    states: Vec<String>,
    /// States of the full dual that carry no rates and were dropped.
    isolated: Vec<String>,
    rates: Vec<Rate>,
}

fn rates_of(g: &Generator) -> Vec<Rate> {
    let mut out = Vec::new();
    for i in 0..g.len() {
        for (j, r) in g.transitions(i) {
            out.push(Rate {
                from: state_label(g.state(i)),
                to: state_label(g.state(j)),
                rate: r,
            });
        }
    }
    out
}

fn dual(cfg: &RunConfig, s: &RateSchedule) -> Result<Output, CliError> {
    let (kind, name) = match cfg.options.process.unwrap_or_default() {
        DualProcess::X => (ProcessKind::X, "X*"),
        DualProcess::Z => (ProcessKind::Z, "Z*"),
    };
    let d = siegmund_dual(&build_generator(kind, s)?)?;
    let g = d.restrict();
    let out = DualOutput {
        process: name,
        states: g.states().map(state_label).collect(),
        isolated: d.isolated.iter().copied().map(state_label).collect(),
        rates: rates_of(&g),
    };
    Ok(ok(match cfg.format {
        Format::Json => json(cfg.command, &out)?,
        Format::Csv => {
            let rows: Vec<Vec<Cell>> = out
                .rates
                .iter()
                .map(|r| vec![r.from.clone().into(), r.to.clone().into(), r.rate.into()])
                .collect();
            to_csv(&["from", "to", "rate"], &rows)
        }
    }))
}

fn verify_duality_cmd(cfg: &RunConfig, s: &RateSchedule) -> Result<Output, CliError> {
    require_finite(cfg, s)?;
    let times = cfg.options.times.clone().unwrap_or(DUALITY_TIMES.to_vec());
    let tol = cfg.solver.tol.unwrap_or(DUALITY_TOL);
    let verbose = cfg.options.verbose.unwrap_or(false);
    let mut reports = Vec::new();
    for (name, primal, dual) in [
        ("X", ProcessKind::X, ProcessKind::XStar),
        ("Z", ProcessKind::Z, ProcessKind::ZStar),
    ] {
        let g = build_generator(primal, s)?;
        let d = build_generator(dual, s)?;
        reports.push((name, verify_duality_with(&g, &d, &times, tol, verbose)));
    }
    let pass = reports.iter().all(|(_, r)| r.pass);
    let text = match cfg.format {
        Format::Json => {
            #[derive(Serialize)]
            struct Pair<'a> {
                process: &'a str,
                #[serde(flatten)]
                report: &'a bdcat::duality::DualityReport,
            }
            let pairs: Vec<Pair> = reports
                .iter()
                .map(|(process, report)| Pair { process, report })
                .collect();
            json(
                cfg.command,
                &serde_json::json!({ "pairs": pairs, "pass": pass }),
            )?
        }
        Format::Csv => {
            let mut rows = Vec::new();
            for (name, r) in &reports {
                for (t, m) in r.times.iter().zip(&r.max_per_time) {
                    rows.push(vec![
                        Cell::from(*name),
                        (*t).into(),
                        (*m).into(),
                        r.tolerance.into(),
                        (*m <= r.tolerance).into(),
                    ]);
                }
            }
            to_csv(
                &["process", "t", "max_discrepancy", "tolerance", "pass"],
                &rows,
            )
        }
    };
    Ok(checked(text, pass, "transient duality"))
}

#[derive(Serialize)]
struct Comparison {
    index: i64,
    from_identity: f64,
    direct: f64,
    rel_error: f64,
}

#[derive(Serialize)]
struct Direction {
    name: &'static str,
    max_rel_error: f64,
    comparisons: Vec<Comparison>,
    /// Why the direction was not evaluated.
    skipped: Option<String>,
}

fn direction(
    name: &'static str,
    from_identity: &SolutionVector,
    direct: &SolutionVector,
    base: i64,
) -> Direction {
    let comparisons: Vec<Comparison> = from_identity
        .iter()
        .map(|(i, r)| {
            let d = direct.at(i) / direct.at(base);
            Comparison {
                index: i,
                from_identity: r,
                direct: d,
                rel_error: rel(r, d),
            }
        })
        .collect();
    Direction {
        name,
        max_rel_error: comparisons.iter().map(|c| c.rel_error).fold(0.0, f64::max),
        comparisons,
        skipped: None,
    }
}

fn verify_theorem(cfg: &RunConfig, s: &RateSchedule, tol: f64) -> Result<Output, CliError> {
    require_finite(cfg, s)?;
    let check_tol = cfg.solver.tol.map_or(THEOREM_TOL, |t| t.max(THEOREM_TOL));
    let b = solve_absorption_b(s, tol)?;
    let a = solve_tail_a(s, tol)?;
    let mut dirs = vec![direction("b_ratio_from_a", &relate_b_from_a(&a, s)?, &b, 1)];
    if s.top() < 2 {
        dirs.push(Direction {
            name: "a_ratio_from_b",
            max_rel_error: 0.0,
            comparisons: Vec::new(),
            skipped: Some("needs N ≥ 2".into()),
        });
    } else {
        match relate_a_from_b(&b, s) {
            Ok(r) => dirs.push(direction("a_ratio_from_b", &r, &a, 1)),
            Err(bdcat::Error::HypothesisViolated(why)) => dirs.push(Direction {
                name: "a_ratio_from_b",
                max_rel_error: 0.0,
                comparisons: Vec::new(),
                skipped: Some(why),
            }),
            Err(e) => return Err(e.into()),
        }
    }
    let max = dirs.iter().map(|d| d.max_rel_error).fold(0.0, f64::max);
    let pass = max <= check_tol;
    let text = match cfg.format {
        Format::Json => json(
            cfg.command,
            &serde_json::json!({
                "directions": dirs,
                "max_rel_error": max,
                "tolerance": check_tol,
                "pass": pass,
            }),
        )?,
        Format::Csv => {
            let rows: Vec<Vec<Cell>> = dirs
                .iter()
                .flat_map(|d| {
                    d.comparisons.iter().map(|c| {
                        vec![
                            d.name.into(),
                            c.index.into(),
                            c.from_identity.into(),
                            c.direct.into(),
                            c.rel_error.into(),
                        ]
                    })
                })
                .collect();
            to_csv(
                &["direction", "index", "from_identity", "direct", "rel_error"],
                &rows,
            )
        }
    };
    let mut out = checked(text, pass, "ratio identities");
    if let Some(why) = dirs.iter().find_map(|d| d.skipped.as_ref()) {
        out.diagnostic
            .get_or_insert_with(|| format!("note: a_ratio_from_b skipped: {why}"));
    }
    Ok(out)
}

fn simulate(
    cfg: &RunConfig,
    s: &RateSchedule,
    tol: f64,
    event_log: Option<&Path>,
) -> Result<Output, CliError> {
    let sim = &cfg.simulation;
    match cfg.options.estimate.unwrap_or_default() {
        Estimand::Absorption => {
            let init = cfg.options.init.unwrap_or(1);
            let est = estimate_absorption(s, init, sim)?;
            let exact = solve_absorption_b(s, tol)?.get(init as i64);
            if let Some(path) = event_log {
                write_event_log(path, s, init, sim)?;
            }
            let text = match cfg.format {
                Format::Json => json(
                    cfg.command,
                    &serde_json::json!({
                        "estimand": "absorption",
                        "init": init,
                        "estimate": est,
                        "exact": exact,
                    }),
                )?,
                Format::Csv => to_csv(
                    &[
                        "init",
                        "value",
                        "stderr",
                        "replicates",
                        "seed",
                        "unresolved",
                        "exact",
                    ],
                    &[vec![
                        init.into(),
                        est.value.into(),
                        est.stderr.into(),
                        est.replicates.into(),
                        Cell::Text(est.seed.to_string()),
                        est.unresolved.into(),
                        exact.map_or(Cell::Text(String::new()), Cell::from),
                    ]],
                ),
            };
            Ok(ok(text))
        }
        Estimand::Stationary => {
            if event_log.is_some() {
                return Err(CliError::Usage(
                    "--event-log applies to absorption runs only".into(),
                ));
            }
            let z = build_generator(ProcessKind::Z, s)?;
            let init = cfg.options.init.map(|i| State::Site(i as i64));
            let est = estimate_stationary(&z, init, sim)?;
            let text = match cfg.format {
                Format::Json => json(
                    cfg.command,
                    &serde_json::json!({ "estimand": "stationary", "estimate": est }),
                )?,
                Format::Csv => {
                    let rows: Vec<Vec<Cell>> = est
                        .states
                        .iter()
                        .zip(est.values.iter().zip(&est.stderr))
                        .map(|(s, (v, e))| vec![state_label(*s).into(), (*v).into(), (*e).into()])
                        .collect();
                    to_csv(&["state", "value", "stderr"], &rows)
                }
            };
            Ok(ok(text))
        }
    }
}

/// One JSON object per line for the first replicates of an absorption run.
fn write_event_log(
    path: &Path,
    s: &RateSchedule,
    init: usize,
    sim: &SimConfig,
) -> Result<(), CliError> {
    let io = |source| CliError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    for r in 0..sim.replicates.min(EVENT_LOG_PATHS) {
        let p = absorption_replicate_path(s, init, sim, r as u64)?;
        let line = serde_json::json!({
            "replicate": r,
            "seed": sim.seed,
            "jumps": p.jumps.iter().map(|(t, s)| (t, state_label(*s))).collect::<Vec<_>>(),
            "status": p.status,
        });
        writeln!(f, "{line}").map_err(io)?;
    }
    f.flush().map_err(io)
}

#[derive(Serialize)]
struct McCheck {
    name: &'static str,
    estimate: f64,
    stderr: f64,
    target: f64,
    z: f64,
    pass: bool,
}

fn mc_check(name: &'static str, e: &Estimate, target: f64) -> McCheck {
    let z = if e.stderr > 0.0 {
        (e.value - target) / e.stderr
    } else if e.value == target {
        0.0
    } else {
        f64::INFINITY
    };
    McCheck {
        name,
        estimate: e.value,
        stderr: e.stderr,
        target,
        z,
        pass: z.abs() <= Z_BAND,
    }
}

fn excursions(cfg: &RunConfig, s: &RateSchedule) -> Result<Output, CliError> {
    let level = cfg.options.level.unwrap_or(1);
    let sim = &cfg.simulation;
    let stats = excursion_statistics(s, level, sim)?;
    let exact = exact_excursion(s, level)?;
    let z = build_generator(ProcessKind::Z, s)?;
    let stationary_cfg = SimConfig {
        replicates: cfg
            .options
            .stationary_replicates
            .unwrap_or(DEFAULT_STATIONARY_REPLICATES),
        ..sim.clone()
    };
    let w = estimate_stationary(&z, None, &stationary_cfg)?;
    let balance = detailed_balance_gap(s, &stats, &w)?;
    let checks = vec![
        mc_check("c direct", &stats.c_direct, exact.c),
        mc_check("c from first-trial ratio", &stats.c_ratio, exact.c),
        mc_check(
            "complete-excursion probability",
            &stats.p_loop,
            exact.p_loop,
        ),
        mc_check(
            "return time to n",
            &stats.return_time_n,
            exact.return_time_n,
        ),
        mc_check(
            "return time to n+1",
            &stats.return_time_next,
            exact.return_time_next,
        ),
        mc_check("total excursion time gap", &stats.wald_gap, 0.0),
        mc_check("return time gap", &stats.return_gap, 0.0),
        mc_check("detailed balance gap", &balance, 0.0),
    ];
    let geometric_pass = stats.geometric.p_value.is_none_or(|p| p > CHI_SQUARE_LEVEL);
    let pass = checks.iter().all(|c| c.pass) && geometric_pass;
    let text = match cfg.format {
        Format::Json => json(
            cfg.command,
            &serde_json::json!({
                "statistics": stats,
                "exact": exact,
                "detailed_balance_gap": balance,
                "checks": checks,
                "geometric_pass": geometric_pass,
                "pass": pass,
            }),
        )?,
        Format::Csv => {
            let mut rows: Vec<Vec<Cell>> = checks
                .iter()
                .map(|c| {
                    vec![
                        c.name.into(),
                        c.estimate.into(),
                        c.stderr.into(),
                        c.target.into(),
                        c.z.into(),
                        c.pass.into(),
                    ]
                })
                .collect();
            rows.push(vec![
                "geometric chi-square p-value".into(),
                stats.geometric.p_value.unwrap_or(f64::NAN).into(),
                Cell::Text(String::new()),
                CHI_SQUARE_LEVEL.into(),
                Cell::Text(String::new()),
                geometric_pass.into(),
            ]);
            to_csv(
                &["check", "estimate", "stderr", "target", "z", "pass"],
                &rows,
            )
        }
    };
    Ok(checked(
        text,
        pass,
        "excursion statistics outside the 3σ band",
    ))
}

fn indexing(cfg: &RunConfig) -> SumIndexing {
    if cfg.options.unshifted_sums.unwrap_or(false) {
        SumIndexing::Unshifted
    } else {
        SumIndexing::Shifted
    }
}

fn moran(cfg: &RunConfig, p: &bdcat::popgen::MoranParams) -> Result<Output, CliError> {
    let report = finite_relations(p)?;
    let pi = moran_forward(p)?.pi;
    let ix = indexing(cfg);
    let g: Vec<f64> = (0..=p.n)
        .map(|i| ancestral_type_prob_finite(&report.a, i, ix))
        .collect::<Result<_, _>>()?;
    let text = match cfg.format {
        Format::Json => json(
            cfg.command,
            &serde_json::json!({ "report": report, "pi": pi, "g_N": g, "indexing": ix }),
        )?,
        Format::Csv => {
            let rows: Vec<Vec<Cell>> = (0..=p.n)
                .map(|i| {
                    let k = i as i64;
                    vec![
                        i.into(),
                        report.b.at(k).into(),
                        report.a.at(k).into(),
                        pi.at(k).into(),
                        g[i].into(),
                    ]
                })
                .collect();
            to_csv(&["i", "b_i", "a_i", "pi_i", "g_N_i"], &rows)
        }
    };
    Ok(checked(text, report.pass, "finite population identities"))
}

fn diffusion(cfg: &RunConfig, p: &bdcat::popgen::DiffusionParams) -> Result<Output, CliError> {
    let imax = cfg.options.imax.unwrap_or(DEFAULT_IMAX);
    let points = cfg.options.grid_points.unwrap_or(DEFAULT_GRID);
    let tol = cfg.solver.tol.unwrap_or(QUADRATURE_TOL);
    let report = diffusion_relations(p, imax, tol)?;
    let ix = indexing(cfg);
    let grid: Vec<(f64, f64)> = (0..points)
        .map(|k| {
            let y = k as f64 / (points - 1) as f64;
            ancestral_type_prob_diffusion(&report.alpha, y, ix).map(|g| (y, g))
        })
        .collect::<Result<_, _>>()?;
    let text = match cfg.format {
        Format::Json => {
            let gamma: Vec<_> = grid
                .iter()
                .map(|(y, g)| serde_json::json!({ "y": y, "gamma": g }))
                .collect();
            json(
                cfg.command,
                &serde_json::json!({ "report": report, "gamma": gamma, "indexing": ix }),
            )?
        }
        Format::Csv => match cfg.options.table.unwrap_or_default() {
            DiffusionTable::Index => {
                let rows: Vec<Vec<Cell>> = (0..=imax)
                    .map(|i| {
                        let k = i as i64;
                        vec![
                            i.into(),
                            report.beta.at(k).into(),
                            report.alpha.at(k).into(),
                        ]
                    })
                    .collect();
                to_csv(&["i", "beta_i", "alpha_i"], &rows)
            }
            DiffusionTable::Grid => {
                let rows: Vec<Vec<Cell>> = grid
                    .iter()
                    .map(|&(y, g)| vec![y.into(), g.into()])
                    .collect();
                to_csv(&["y", "gamma"], &rows)
            }
        },
    };
    Ok(checked(text, report.pass, "diffusion identities"))
}
