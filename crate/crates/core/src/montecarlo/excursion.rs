//! Excursion statistics of the marked level-`n` process started at `(n+1,*)`.
//!
//! A trial starts each time the process sits in `(n+1,*)`. It ends with a
//! jump to `(n,*)`, a jump to `(n,∘)`, or a jump up to `(n+2,*)`. In the last
//! case the trial is a complete excursion if the process comes back to
//! `(n+1,*)` before the flag switches. Excursion durations include the
//! holding time in `(n+1,*)` that precedes the upward jump.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use super::{
    jump, stream_rng, Estimate, SimConfig, StationaryEstimate, PHASE_EXCURSION, PHASE_RETURN_N,
    PHASE_RETURN_NEXT, PHASE_WALD,
};
use crate::error::{Error, Result};
use crate::generator::{
    build_generator, build_marked_generator, Generator, MarkedGenerator, MarkedState, ProcessKind,
    State,
};
use crate::schedule::RateSchedule;
use crate::solvers::{
    first_passage_prob, solve_absorption_b, stationary_distribution, DEFAULT_TOL,
};

/// Chi-square goodness of fit of the excursion count `M` against
/// `P(M = m) = p^m (1-p)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GeometricFit {
    /// Maximum-likelihood estimate of `p`.
    pub p_hat: f64,
    /// `(label, observed, expected)`; the last bin collects the tail.
    pub bins: Vec<(String, u64, f64)>,
    pub chi_square: f64,
    pub dof: usize,
    /// `None` when there are too few bins for a test.
    pub p_value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExcursionStats {
    pub level: usize,
    pub replicates: usize,
    pub seed: u64,
    /// `P(T_n < T_∘)` as the fraction of successful replicates.
    pub c_direct: Estimate,
    /// `p← / (1 - p↻)` from first-trial frequencies.
    pub c_ratio: Estimate,
    pub p_down: Estimate,
    pub p_loop: Estimate,
    pub p_catastrophe: Estimate,
    /// Mean duration of one complete excursion.
    pub excursion_time: Estimate,
    /// Mean total time spent in complete excursions per replicate.
    pub total_excursion_time: Estimate,
    /// `E[T_tot] - p↻/(1-p↻)·E[T]`, the right side from an independent run.
    pub wald_gap: Estimate,
    pub return_time_n: Estimate,
    pub return_time_next: Estimate,
    /// `E[R_{n+1,n+1}] - (1-p↻)·E[R_{n,n}]`.
    pub return_gap: Estimate,
    /// `excursion_counts[m]` replicates had exactly `m` complete excursions.
    pub excursion_counts: Vec<u64>,
    pub geometric: GeometricFit,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Outcome {
    Down,
    Loop,
    Catastrophe,
}

#[derive(Clone, Debug)]
struct Replicate {
    first: Outcome,
    success: bool,
    loops: u64,
    /// Sum and sum of squares of complete-excursion durations.
    time: f64,
    time_sq: f64,
}

struct Layout {
    start: usize,
    down: usize,
    catastrophe: usize,
}

fn run_trials(gen: &Generator, at: &Layout, cap: u64, rng: &mut ChaCha8Rng) -> Option<Replicate> {
    let mut events = 0u64;
    let mut first = None;
    let (mut loops, mut time, mut time_sq) = (0, 0.0, 0.0);
    loop {
        if events >= cap || gen.is_absorbing(at.start) {
            return None;
        }
        let (hold, next) = jump(gen, at.start, rng);
        events += 1;
        let outcome = if next == at.down {
            Outcome::Down
        } else if next == at.catastrophe {
            Outcome::Catastrophe
        } else {
            let mut elapsed = hold;
            let mut cur = next;
            loop {
                if events >= cap || gen.is_absorbing(cur) {
                    return None;
                }
                let (h, nx) = jump(gen, cur, rng);
                events += 1;
                elapsed += h;
                cur = nx;
                if cur == at.start {
                    loops += 1;
                    time += elapsed;
                    time_sq += elapsed * elapsed;
                    break Outcome::Loop;
                }
                if cur == at.catastrophe {
                    break Outcome::Catastrophe;
                }
            }
        };
        let first = *first.get_or_insert(outcome);
        match outcome {
            Outcome::Loop => continue,
            Outcome::Down | Outcome::Catastrophe => {
                return Some(Replicate {
                    first,
                    success: outcome == Outcome::Down,
                    loops,
                    time,
                    time_sq,
                })
            }
        }
    }
}

fn run_phase(mgen: &MarkedGenerator, cfg: &SimConfig, phase: u64) -> Vec<Option<Replicate>> {
    let n = mgen.level();
    let at = Layout {
        start: mgen.encode(MarkedState {
            level: n + 1,
            marked: true,
        }),
        down: mgen.encode(MarkedState {
            level: n,
            marked: true,
        }),
        catastrophe: mgen.encode(MarkedState {
            level: n,
            marked: false,
        }),
    };
    (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream_rng(cfg.seed, phase, r as u64);
            run_trials(mgen.generator(), &at, cfg.max_events, &mut rng)
        })
        .collect()
}

fn return_times(gen: &Generator, start: usize, cfg: &SimConfig, phase: u64) -> Vec<Option<f64>> {
    (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            if gen.is_absorbing(start) {
                return None;
            }
            let mut rng = stream_rng(cfg.seed, phase, r as u64);
            let (mut t, mut cur) = jump(gen, start, &mut rng);
            for _ in 1..cfg.max_events {
                if cur == start {
                    return Some(t);
                }
                if gen.is_absorbing(cur) {
                    return None;
                }
                let (h, nx) = jump(gen, cur, &mut rng);
                t += h;
                cur = nx;
            }
            None
        })
        .collect()
}

fn estimate(cfg: &SimConfig, value: f64, stderr: f64, unresolved: usize) -> Estimate {
    Estimate {
        value,
        stderr,
        replicates: cfg.replicates,
        seed: cfg.seed,
        unresolved,
    }
}

fn proportion(hits: usize, total: usize) -> (f64, f64) {
    let p = hits as f64 / total as f64;
    (p, (p * (1.0 - p) / total as f64).sqrt())
}

fn sample_mean(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, (var / n).sqrt())
}

fn geometric_fit(counts: &[u64]) -> GeometricFit {
    let reps: u64 = counts.iter().sum();
    let loops: u64 = counts.iter().enumerate().map(|(m, &c)| m as u64 * c).sum();
    let p = if loops == 0 {
        0.0
    } else {
        loops as f64 / (loops + reps) as f64
    };
    let total = reps as f64;
    let expected = |m: usize| total * p.powi(m as i32) * (1.0 - p);
    // The tail bin starts at the first count whose expectation drops below 5.
    let tail = (0..).find(|&m| expected(m) < 5.0).unwrap_or(0).max(1);
    let mut bins = Vec::with_capacity(tail + 1);
    for m in 0..tail {
        bins.push((
            m.to_string(),
            counts.get(m).copied().unwrap_or(0),
            expected(m),
        ));
    }
    let tail_obs = counts.iter().skip(tail).sum();
    bins.push((format!("≥{tail}"), tail_obs, total * p.powi(tail as i32)));
    while bins.len() > 1 && bins[bins.len() - 1].2 < 5.0 {
        let (_, o, e) = bins.pop().expect("nonempty");
        let last = bins.last_mut().expect("nonempty");
        last.0 = format!("≥{}", last.0.trim_start_matches('≥'));
        last.1 += o;
        last.2 += e;
    }
    let chi_square = bins
        .iter()
        .filter(|(_, _, e)| *e > 0.0)
        .map(|&(_, o, e)| (o as f64 - e).powi(2) / e)
        .sum();
    let dof = bins.len().saturating_sub(2);
    let p_value = (dof >= 1).then(|| {
        ChiSquared::new(dof as f64)
            .expect("positive dof")
            .sf(chi_square)
    });
    GeometricFit {
        p_hat: p,
        bins,
        chi_square,
        dof,
        p_value,
    }
}

/// Simulates the marked process of level `n` from `(n+1,*)` and the return
/// times of `Zn` to `n` and `n+1`.
pub fn excursion_statistics(
    sched: &RateSchedule,
    n: usize,
    cfg: &SimConfig,
) -> Result<ExcursionStats> {
    cfg.validate()?;
    let mgen = build_marked_generator(sched, n)?;
    let main = run_phase(&mgen, cfg, PHASE_EXCURSION);
    let done: Vec<&Replicate> = main.iter().flatten().collect();
    let unresolved = cfg.replicates - done.len();
    if done.is_empty() {
        return Err(Error::HypothesisViolated(
            "every excursion replicate hit the event cap".into(),
        ));
    }
    let r = done.len();
    let count = |o: Outcome| done.iter().filter(|x| x.first == o).count();
    let (p_down, se_down) = proportion(count(Outcome::Down), r);
    let (p_loop, se_loop) = proportion(count(Outcome::Loop), r);
    let (p_cat, se_cat) = proportion(count(Outcome::Catastrophe), r);
    let (c_direct, se_direct) = proportion(done.iter().filter(|x| x.success).count(), r);

    let q = 1.0 - p_loop;
    let c_ratio = if q > 0.0 { p_down / q } else { f64::NAN };
    let cov = -p_down * p_loop / r as f64;
    let var_ratio = se_down.powi(2) / q.powi(2)
        + p_down.powi(2) * se_loop.powi(2) / q.powi(4)
        + 2.0 * p_down * cov / q.powi(3);

    let mut counts: Vec<u64> = Vec::new();
    for x in &done {
        let m = x.loops as usize;
        if counts.len() <= m {
            counts.resize(m + 1, 0);
        }
        counts[m] += 1;
    }
    let geometric = geometric_fit(&counts);
    let loops: u64 = done.iter().map(|x| x.loops).sum();
    let trials = loops + r as u64;
    let p_mle = geometric.p_hat;
    let se_mle = (p_mle * (1.0 - p_mle) / trials as f64).sqrt();

    let excursion_time = if loops > 0 {
        let sum: f64 = done.iter().map(|x| x.time).sum();
        let sum_sq: f64 = done.iter().map(|x| x.time_sq).sum();
        let mean = sum / loops as f64;
        let var = if loops > 1 {
            (sum_sq - loops as f64 * mean * mean) / (loops - 1) as f64
        } else {
            0.0
        };
        (mean, (var.max(0.0) / loops as f64).sqrt())
    } else {
        (0.0, 0.0)
    };
    let totals: Vec<f64> = done.iter().map(|x| x.time).collect();
    let total_time = sample_mean(&totals);

    // Independent run for the right side of the Wald identity.
    let wald = run_phase(&mgen, cfg, PHASE_WALD);
    let wald_done: Vec<&Replicate> = wald.iter().flatten().collect();
    let counts_w: Vec<f64> = wald_done.iter().map(|x| x.loops as f64).collect();
    let loops_w: u64 = wald_done.iter().map(|x| x.loops).sum();
    let (mean_m, se_m) = sample_mean(&counts_w);
    let (t_w, se_t_w) = if loops_w > 0 {
        let sum: f64 = wald_done.iter().map(|x| x.time).sum();
        let sum_sq: f64 = wald_done.iter().map(|x| x.time_sq).sum();
        let mean = sum / loops_w as f64;
        let var = if loops_w > 1 {
            (sum_sq - loops_w as f64 * mean * mean) / (loops_w - 1) as f64
        } else {
            0.0
        };
        (mean, (var.max(0.0) / loops_w as f64).sqrt())
    } else {
        (0.0, 0.0)
    };
    let rhs = mean_m * t_w;
    let se_rhs = ((se_m * t_w).powi(2) + (mean_m * se_t_w).powi(2)).sqrt();
    let wald_gap = estimate(
        cfg,
        total_time.0 - rhs,
        (total_time.1.powi(2) + se_rhs.powi(2)).sqrt(),
        unresolved + (cfg.replicates - wald_done.len()),
    );

    let zn = build_generator(ProcessKind::Zn(n), sched)?;
    let at = |i: usize| zn.index(State::Site(i as i64)).expect("level in range");
    let rn = return_times(&zn, at(n), cfg, PHASE_RETURN_N);
    let rnext = return_times(&zn, at(n + 1), cfg, PHASE_RETURN_NEXT);
    let summarize = |xs: &[Option<f64>]| {
        let ok: Vec<f64> = xs.iter().flatten().copied().collect();
        let missing = xs.len() - ok.len();
        if ok.is_empty() {
            (f64::NAN, f64::NAN, missing)
        } else {
            let (m, se) = sample_mean(&ok);
            (m, se, missing)
        }
    };
    let (r_n, se_rn, miss_n) = summarize(&rn);
    let (r_next, se_rnext, miss_next) = summarize(&rnext);
    let gap = r_next - (1.0 - p_mle) * r_n;
    let se_gap =
        (se_rnext.powi(2) + ((1.0 - p_mle) * se_rn).powi(2) + (r_n * se_mle).powi(2)).sqrt();

    Ok(ExcursionStats {
        level: n,
        replicates: cfg.replicates,
        seed: cfg.seed,
        c_direct: estimate(cfg, c_direct, se_direct, unresolved),
        c_ratio: estimate(cfg, c_ratio, var_ratio.max(0.0).sqrt(), unresolved),
        p_down: estimate(cfg, p_down, se_down, unresolved),
        p_loop: estimate(cfg, p_loop, se_loop, unresolved),
        p_catastrophe: estimate(cfg, p_cat, se_cat, unresolved),
        excursion_time: estimate(cfg, excursion_time.0, excursion_time.1, unresolved),
        total_excursion_time: estimate(cfg, total_time.0, total_time.1, unresolved),
        wald_gap,
        return_time_n: estimate(cfg, r_n, se_rn, miss_n),
        return_time_next: estimate(cfg, r_next, se_rnext, miss_next),
        return_gap: estimate(cfg, gap, se_gap, miss_n + miss_next + unresolved),
        excursion_counts: counts,
        geometric,
    })
}

/// `λ_n ŵ_n ĉ_n - μ_{n+1} ŵ_{n+1}` with a propagated standard error, where
/// `w` estimates the stationary law of `Z` and `ĉ_n` is the direct estimate.
pub fn detailed_balance_gap(
    sched: &RateSchedule,
    stats: &ExcursionStats,
    w: &StationaryEstimate,
) -> Result<Estimate> {
    let n = stats.level;
    let pos = |i: usize| {
        w.position(State::Site(i as i64))
            .ok_or_else(|| Error::Range {
                n: i,
                lo: 1,
                hi: sched.top(),
            })
    };
    let (kn, kn1) = (pos(n)?, pos(n + 1)?);
    let lam = sched.lambda(n);
    let mu = sched.mu(n + 1);
    let c = stats.c_direct;
    let (gap, se_w) = w.linear_combination(&[(kn, lam * c.value), (kn1, -mu)]);
    let wn = w.values[kn];
    Ok(Estimate {
        value: gap,
        stderr: (se_w.powi(2) + (lam * wn * c.stderr).powi(2)).sqrt(),
        replicates: c.replicates,
        seed: c.seed,
        unresolved: c.unresolved + w.unresolved,
    })
}

/// Exact counterparts of the excursion estimates at one level.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExactExcursion {
    pub level: usize,
    /// `b_{n+1} / b_n`.
    pub c: f64,
    /// Probability that a trial from `(n+1,*)` is a complete excursion.
    pub p_loop: f64,
    /// Mean return times to `n` and `n+1` in the level-`n` piece.
    pub return_time_n: f64,
    pub return_time_next: f64,
}

/// Computes [`ExactExcursion`] from linear solves on the marked and level-`n`
/// generators.
pub fn exact_excursion(sched: &RateSchedule, n: usize) -> Result<ExactExcursion> {
    let b = solve_absorption_b(sched, DEFAULT_TOL)?;
    let bn = b.at(n as i64);
    if bn == 0.0 {
        return Err(Error::DegenerateDenominator("b_n"));
    }
    let m = build_marked_generator(sched, n)?;
    let g = m.generator();
    let at = |level, marked| g.state(m.encode(MarkedState { level, marked }));
    let from_idx = m.encode(MarkedState {
        level: n + 1,
        marked: true,
    });
    let from = g.state(from_idx);
    let p_loop = if n + 2 > m.top() {
        0.0
    } else {
        let up = g.rate(from, at(n + 2, true)) / g.exit_rate(from_idx);
        let mut taboo = vec![at(n, true)];
        taboo.extend((n..=m.top()).map(|i| at(i, false)));
        up * first_passage_prob(g, at(n + 2, true), &[from], &taboo)?
    };
    let zn = build_generator(ProcessKind::Zn(n), sched)?;
    let w = stationary_distribution(&zn, DEFAULT_TOL)?;
    let ret = |i: usize| -> Result<f64> {
        let k = zn.index(State::Site(i as i64)).ok_or(Error::Range {
            n: i,
            lo: n,
            hi: m.top(),
        })?;
        Ok(1.0 / (w.at(i as i64) * zn.exit_rate(k)))
    };
    Ok(ExactExcursion {
        level: n,
        c: b.at(n as i64 + 1) / bn,
        p_loop,
        return_time_n: ret(n)?,
        return_time_next: ret(n + 1)?,
    })
}
