//! Monte Carlo simulation of the process families.
//!
//! Every replicate draws from its own ChaCha8 stream keyed by
//! `(seed, phase, replicate)`, and replicate results are reduced in index
//! order, so estimates do not depend on how rayon schedules the work.

mod excursion;

pub use excursion::{
    detailed_balance_gap, exact_excursion, excursion_statistics, ExactExcursion, ExcursionStats,
    GeometricFit,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{
    build_generator, Generator, MarkedGenerator, MarkedState, ProcessKind, State,
};
use crate::schedule::RateSchedule;

/// Simulation settings shared by all estimators.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub seed: u64,
    pub replicates: usize,
    /// Maximum number of jumps simulated per path.
    pub max_events: u64,
    /// Fraction of the horizon discarded before occupation times are recorded.
    pub burn_in: f64,
    pub horizon: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            seed: 0,
            replicates: 10_000,
            max_events: 10_000_000,
            burn_in: 0.1,
            horizon: 1_000.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(Error::invalid("replicates", None, "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.burn_in) {
            return Err(Error::invalid("burn_in", None, "must lie in [0,1)"));
        }
        if self.horizon.is_nan() || self.horizon <= 0.0 {
            return Err(Error::invalid("horizon", None, "must be positive"));
        }
        if self.max_events == 0 {
            return Err(Error::invalid("max_events", None, "must be at least 1"));
        }
        Ok(())
    }
}

/// A scalar Monte Carlo estimate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
    pub replicates: usize,
    pub seed: u64,
    /// Replicates dropped because they hit the horizon or the event cap.
    pub unresolved: usize,
}

impl Estimate {
    /// Whether `target` lies within `k` standard errors.
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.stderr
    }
}

/// How a simulated path ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum PathStatus<S> {
    Absorbed(S),
    Horizon,
    EventCap,
}

/// A simulated path: the initial state at time 0 followed by every jump.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathRecord<S> {
    pub jumps: Vec<(f64, S)>,
    pub status: PathStatus<S>,
}

const PHASE_ABSORPTION: u64 = 1;
const PHASE_STATIONARY: u64 = 2;
pub(crate) const PHASE_EXCURSION: u64 = 3;
pub(crate) const PHASE_WALD: u64 = 4;
pub(crate) const PHASE_RETURN_N: u64 = 5;
pub(crate) const PHASE_RETURN_NEXT: u64 = 6;

/// The stream for replicate `replicate` of estimator phase `phase`.
pub(crate) fn stream_rng(seed: u64, phase: u64, replicate: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((phase << 40) | replicate);
    rng
}

/// Holding time and target of one jump from a non-absorbing state.
#[inline]
pub(crate) fn jump(gen: &Generator, idx: usize, rng: &mut ChaCha8Rng) -> (f64, usize) {
    let exit = gen.exit_rate(idx);
    let hold: f64 = rng.sample::<f64, _>(Exp1) / exit;
    let u = rng.random::<f64>() * exit;
    (hold, gen.sample_target(idx, u))
}

fn run_recorded(
    gen: &Generator,
    start: usize,
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> PathRecord<usize> {
    let mut t = 0.0;
    let mut cur = start;
    let mut jumps = vec![(0.0, start)];
    let mut events = 0u64;
    let status = loop {
        if gen.is_absorbing(cur) {
            break PathStatus::Absorbed(cur);
        }
        if events >= cfg.max_events {
            break PathStatus::EventCap;
        }
        let (hold, next) = jump(gen, cur, rng);
        if t + hold > cfg.horizon {
            break PathStatus::Horizon;
        }
        t += hold;
        cur = next;
        events += 1;
        jumps.push((t, cur));
    };
    PathRecord { jumps, status }
}

fn relabel<S: Copy>(path: PathRecord<usize>, label: impl Fn(usize) -> S) -> PathRecord<S> {
    PathRecord {
        jumps: path.jumps.into_iter().map(|(t, i)| (t, label(i))).collect(),
        status: match path.status {
            PathStatus::Absorbed(i) => PathStatus::Absorbed(label(i)),
            PathStatus::Horizon => PathStatus::Horizon,
            PathStatus::EventCap => PathStatus::EventCap,
        },
    }
}

/// Simulates one path of `gen` from `init` on the given stream of `cfg.seed`.
pub fn simulate_path(
    gen: &Generator,
    init: State,
    cfg: &SimConfig,
    stream: u64,
) -> Result<PathRecord<State>> {
    cfg.validate()?;
    let start = gen.index(init).ok_or_else(|| {
        Error::invalid(
            "init",
            None,
            format!("state {init} is not a state of the generator"),
        )
    })?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    Ok(relabel(run_recorded(gen, start, cfg, &mut rng), |i| {
        gen.state(i)
    }))
}

/// Simulates one path of the marked process. The flag switches to `∘` at the
/// first catastrophe; later catastrophes remain visible as jumps to `(n,∘)`.
pub fn simulate_marked_path(
    gen: &MarkedGenerator,
    init: MarkedState,
    cfg: &SimConfig,
    stream: u64,
) -> Result<PathRecord<MarkedState>> {
    cfg.validate()?;
    if init.level < gen.level() || init.level > gen.top() {
        return Err(Error::Range {
            n: init.level,
            lo: gen.level(),
            hi: gen.top(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(stream);
    let path = run_recorded(gen.generator(), gen.encode(init), cfg, &mut rng);
    Ok(relabel(path, |i| gen.decode(i)))
}

/// The path of replicate `replicate` of [`estimate_absorption`], for event logs.
pub fn absorption_replicate_path(
    sched: &RateSchedule,
    init: usize,
    cfg: &SimConfig,
    replicate: u64,
) -> Result<PathRecord<State>> {
    let gen = build_generator(ProcessKind::X, sched)?;
    simulate_path(
        &gen,
        State::Site(init as i64),
        cfg,
        (PHASE_ABSORPTION << 40) | replicate,
    )
}

/// Fraction of replicates of `X` started at `init` that are absorbed in 0.
pub fn estimate_absorption(sched: &RateSchedule, init: usize, cfg: &SimConfig) -> Result<Estimate> {
    cfg.validate()?;
    let gen = build_generator(ProcessKind::X, sched)?;
    let start = gen
        .index(State::Site(init as i64))
        .ok_or_else(|| Error::Range {
            n: init,
            lo: 0,
            hi: sched.top(),
        })?;
    let zero = gen.index(State::Site(0)).expect("X contains 0");
    let outcomes: Vec<Option<bool>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(cfg.seed, PHASE_ABSORPTION, r as u64);
            let mut t = 0.0;
            let mut cur = start;
            for _ in 0..=cfg.max_events {
                if gen.is_absorbing(cur) {
                    return Some(cur == zero);
                }
                let (hold, next) = jump(&gen, cur, &mut rng);
                t += hold;
                if t > cfg.horizon {
                    return None;
                }
                cur = next;
            }
            None
        })
        .collect();
    let resolved = outcomes.iter().flatten().count();
    if resolved == 0 {
        return Err(Error::HypothesisViolated(
            "no replicate was absorbed within the horizon and event cap".into(),
        ));
    }
    let hits = outcomes.iter().flatten().filter(|&&h| h).count();
    let p = hits as f64 / resolved as f64;
    Ok(Estimate {
        value: p,
        stderr: (p * (1.0 - p) / resolved as f64).sqrt(),
        replicates: cfg.replicates,
        seed: cfg.seed,
        unresolved: cfg.replicates - resolved,
    })
}

/// Occupation-measure estimate of a stationary distribution.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StationaryEstimate {
    pub states: Vec<State>,
    pub values: Vec<f64>,
    pub stderr: Vec<f64>,
    pub batches: usize,
    pub replicates: usize,
    pub seed: u64,
    pub unresolved: usize,
    #[serde(skip)]
    batch_means: Vec<Vec<f64>>,
}

impl StationaryEstimate {
    /// Position of `s` in `states`.
    pub fn position(&self, s: State) -> Option<usize> {
        self.states.iter().position(|&t| t == s)
    }

    /// `Σ c_k w_k` with its batch-means standard error.
    pub fn linear_combination(&self, terms: &[(usize, f64)]) -> (f64, f64) {
        let per_batch: Vec<f64> = self
            .batch_means
            .iter()
            .map(|b| terms.iter().map(|&(k, c)| c * b[k]).sum())
            .collect();
        mean_and_stderr(&per_batch)
    }

    /// `w_k / Σ_{j∈set} w_j` with a delta-method standard error.
    pub fn conditional(&self, k: usize, set: &[usize]) -> (f64, f64) {
        let num: Vec<f64> = self.batch_means.iter().map(|b| b[k]).collect();
        let den: Vec<f64> = self
            .batch_means
            .iter()
            .map(|b| set.iter().map(|&j| b[j]).sum())
            .collect();
        let (x, _) = mean_and_stderr(&num);
        let (y, _) = mean_and_stderr(&den);
        let ratio = x / y;
        let resid: Vec<f64> = num.iter().zip(&den).map(|(a, b)| a - ratio * b).collect();
        let (_, se) = mean_and_stderr(&resid);
        (ratio, se / y)
    }
}

fn mean_and_stderr(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Time spent in each state during `[from, to)`, split into `k` equal windows
/// and normalised to fractions. `None` if the event cap is hit first.
fn occupation(
    gen: &Generator,
    start: usize,
    cfg: &SimConfig,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Option<Vec<Vec<f64>>> {
    let from = cfg.burn_in * cfg.horizon;
    let width = (cfg.horizon - from) / k as f64;
    let mut occ = vec![vec![0.0; gen.len()]; k];
    let mut add = |a: f64, b: f64, s: usize| {
        let (a, b) = (a.max(from), b.min(cfg.horizon));
        if b <= a {
            return;
        }
        let first = (((a - from) / width) as usize).min(k - 1);
        let last = (((b - from) / width) as usize).min(k - 1);
        for (w, row) in occ.iter_mut().enumerate().take(last + 1).skip(first) {
            let lo = from + w as f64 * width;
            let hi = lo + width;
            row[s] += b.min(hi) - a.max(lo);
        }
    };
    let mut t = 0.0;
    let mut cur = start;
    let mut events = 0u64;
    while t < cfg.horizon {
        if gen.is_absorbing(cur) {
            add(t, cfg.horizon, cur);
            break;
        }
        if events >= cfg.max_events {
            return None;
        }
        let (hold, next) = jump(gen, cur, rng);
        add(t, t + hold, cur);
        t += hold;
        cur = next;
        events += 1;
    }
    for row in &mut occ {
        for x in row.iter_mut() {
            *x /= width;
        }
    }
    Some(occ)
}

const MIN_BATCHES: usize = 16;
const MAX_BATCHES: usize = 1024;

/// Time-averaged occupation after burn-in, averaged over replicates started
/// at `init` (the lowest state if `None`). Standard errors come from batch
/// means: whole replicates when there are at least 16 of them, otherwise
/// equal time windows within each replicate.
pub fn estimate_stationary(
    gen: &Generator,
    init: Option<State>,
    cfg: &SimConfig,
) -> Result<StationaryEstimate> {
    cfg.validate()?;
    let start = match init {
        Some(s) => gen.index(s).ok_or_else(|| {
            Error::invalid(
                "init",
                None,
                format!("state {s} is not a state of the generator"),
            )
        })?,
        None => 0,
    };
    let r = cfg.replicates;
    let windows = MIN_BATCHES.div_ceil(r).max(1);
    let groups = (r * windows).min(MAX_BATCHES);
    let results: Vec<(Vec<Vec<f64>>, usize)> = if windows > 1 {
        (0..r)
            .into_par_iter()
            .map(|rep| {
                let mut rng = stream_rng(cfg.seed, PHASE_STATIONARY, rep as u64);
                match occupation(gen, start, cfg, windows, &mut rng) {
                    Some(occ) => (occ, 0),
                    None => (Vec::new(), 1),
                }
            })
            .collect()
    } else {
        (0..groups)
            .into_par_iter()
            .map(|g| {
                let (lo, hi) = (g * r / groups, (g + 1) * r / groups);
                let mut acc = vec![0.0; gen.len()];
                let (mut used, mut dropped) = (0usize, 0usize);
                for rep in lo..hi {
                    let mut rng = stream_rng(cfg.seed, PHASE_STATIONARY, rep as u64);
                    match occupation(gen, start, cfg, 1, &mut rng) {
                        Some(occ) => {
                            used += 1;
                            for (a, x) in acc.iter_mut().zip(&occ[0]) {
                                *a += x;
                            }
                        }
                        None => dropped += 1,
                    }
                }
                if used == 0 {
                    return (Vec::new(), dropped);
                }
                for a in &mut acc {
                    *a /= used as f64;
                }
                (vec![acc], dropped)
            })
            .collect()
    };
    let unresolved = results.iter().map(|(_, d)| d).sum();
    let batch_means: Vec<Vec<f64>> = results.into_iter().flat_map(|(b, _)| b).collect();
    if batch_means.is_empty() {
        return Err(Error::HypothesisViolated(
            "every replicate hit the event cap".into(),
        ));
    }
    let n = gen.len();
    let (values, stderr) = (0..n)
        .map(|s| mean_and_stderr(&batch_means.iter().map(|b| b[s]).collect::<Vec<_>>()))
        .unzip();
    Ok(StationaryEstimate {
        states: gen.states().collect(),
        values,
        stderr,
        batches: batch_means.len(),
        replicates: r,
        seed: cfg.seed,
        unresolved,
        batch_means,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::Extent;

    fn two_state() -> RateSchedule {
        RateSchedule::from_arrays(Extent::Finite(2), vec![1.0], vec![1.0, 1.0], 1.0).unwrap()
    }

    fn cfg(seed: u64, replicates: usize) -> SimConfig {
        SimConfig {
            seed,
            replicates,
            ..SimConfig::default()
        }
    }

    #[test]
    fn absorbing_path_ends_in_zero_or_cemetery() {
        let gen = build_generator(ProcessKind::X, &two_state()).unwrap();
        for stream in 0..50 {
            let p = simulate_path(&gen, State::Site(1), &cfg(3, 1), stream).unwrap();
            match p.status {
                PathStatus::Absorbed(s) => assert!(s == State::Site(0) || s == State::Cemetery),
                other => panic!("unexpected status {other:?}"),
            }
        }
    }

    #[test]
    fn replayed_paths_reproduce_the_estimate() {
        let c = cfg(21, 300);
        let est = estimate_absorption(&two_state(), 1, &c).unwrap();
        let hits = (0..300)
            .filter(|&r| {
                absorption_replicate_path(&two_state(), 1, &c, r)
                    .unwrap()
                    .status
                    == PathStatus::Absorbed(State::Site(0))
            })
            .count();
        assert_eq!(hits as f64 / 300.0, est.value);
    }

    #[test]
    fn paths_are_valid_and_reproducible() {
        let gen = build_generator(ProcessKind::Z, &two_state()).unwrap();
        let c = SimConfig {
            horizon: 50.0,
            ..cfg(11, 1)
        };
        let p = simulate_path(&gen, State::Site(2), &c, 7).unwrap();
        assert_eq!(p, simulate_path(&gen, State::Site(2), &c, 7).unwrap());
        assert_eq!(p.status, PathStatus::Horizon);
        for w in p.jumps.windows(2) {
            assert!(w[1].0 > w[0].0);
            assert!(gen.rate(w[0].1, w[1].1) > 0.0);
        }
    }

    #[test]
    fn event_cap_is_a_status() {
        let gen = build_generator(ProcessKind::Z, &two_state()).unwrap();
        let c = SimConfig {
            max_events: 5,
            ..cfg(1, 1)
        };
        let p = simulate_path(&gen, State::Site(1), &c, 0).unwrap();
        assert_eq!(p.status, PathStatus::EventCap);
        assert_eq!(p.jumps.len(), 6);
    }

    #[test]
    fn absorption_two_state() {
        let e = estimate_absorption(&two_state(), 1, &cfg(2024, 100_000)).unwrap();
        assert!(e.within(0.4, 4.0), "{e:?}");
    }

    #[test]
    fn absorption_from_zero_is_certain() {
        let e = estimate_absorption(&two_state(), 0, &cfg(1, 100)).unwrap();
        assert_eq!((e.value, e.stderr), (1.0, 0.0));
    }

    #[test]
    fn absorption_one_step_race() {
        let s = RateSchedule::from_arrays(Extent::Finite(1), vec![], vec![1.0], 50.0).unwrap();
        let e = estimate_absorption(&s, 1, &cfg(5, 20_000)).unwrap();
        assert!(e.within(1.0 / 51.0, 3.0), "{e:?}");
    }

    #[test]
    fn stationary_two_state() {
        let gen = build_generator(ProcessKind::Z, &two_state()).unwrap();
        let c = SimConfig {
            horizon: 200.0,
            ..cfg(99, 400)
        };
        let w = estimate_stationary(&gen, None, &c).unwrap();
        assert!(w.batches >= 16);
        for (v, (se, exact)) in w
            .values
            .iter()
            .zip(w.stderr.iter().zip([2.0 / 3.0, 1.0 / 3.0]))
        {
            assert!((v - exact).abs() <= 3.0 * se, "{v} vs {exact} ± {se}");
        }
    }

    #[test]
    fn stationary_with_few_replicates_uses_time_windows() {
        let gen = build_generator(ProcessKind::Z, &two_state()).unwrap();
        let c = SimConfig {
            horizon: 20_000.0,
            ..cfg(4, 1)
        };
        let w = estimate_stationary(&gen, None, &c).unwrap();
        assert_eq!(w.batches, 16);
        assert!((w.values[0] - 2.0 / 3.0).abs() <= 3.0 * w.stderr[0] + 1e-3);
    }

    #[test]
    fn stationary_single_state() {
        let gen = Generator::from_rates(1, 1, false, []).unwrap();
        let w = estimate_stationary(&gen, None, &cfg(0, 20)).unwrap();
        assert_eq!(w.values, vec![1.0]);
        assert_eq!(w.stderr, vec![0.0]);
    }

    #[test]
    fn replicate_streams_are_distinct() {
        let mut a = stream_rng(1, PHASE_STATIONARY, 0);
        let mut b = stream_rng(1, PHASE_STATIONARY, 1);
        assert_ne!(a.random::<u64>(), b.random::<u64>());
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig {
            replicates: 0,
            ..SimConfig::default()
        }
        .validate()
        .is_err());
        assert!(SimConfig {
            burn_in: 1.0,
            ..SimConfig::default()
        }
        .validate()
        .is_err());
        assert!(SimConfig::default().validate().is_ok());
    }
}
