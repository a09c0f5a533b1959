//! Acceptance run: one PASS/FAIL line per criterion. Exits nonzero if any
//! criterion fails.

use std::process::Command;
use std::time::{Duration, Instant};

use bdcat::duality::{
    bar_absorption_ratios, relate_a_from_b, relate_b_from_a, rho_from_b, verify_duality,
};
use bdcat::generator::{build_generator, ProcessKind, State};
use bdcat::montecarlo::{
    detailed_balance_gap, estimate_stationary, exact_excursion, excursion_statistics, Estimate,
    SimConfig,
};
use bdcat::popgen::{
    ancestral_type_prob_diffusion, ancestral_type_prob_finite, diffusion_relations,
    fearnhead_tails, finite_relations, moran_forward, sampling_moments, wright_moments,
    DiffusionParams, MoranParams, SumIndexing,
};
use bdcat::schedule::{Extent, RateSchedule};
use bdcat::solvers::{
    first_passage_prob, solve_absorption_b, solve_tail_a, stationary_distribution, DEFAULT_TOL,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEED_THEOREM: u64 = 0xA1;
const SEED_DUALITY: u64 = 0xA3;
const SEED_CORRESPONDENCE: u64 = 0xA4;
const SEED_MC: u64 = 0xA5;
const SEED_MORAN: u64 = 0xA6;
const SEED_DETERMINISM: u64 = 0xA8;

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn random_schedule(rng: &mut ChaCha8Rng, max_n: usize) -> RateSchedule {
    let n = rng.random_range(2..=max_n);
    let lambda = (0..n - 1).map(|_| rng.random_range(0.1..=10.0)).collect();
    let mu = (0..n).map(|_| rng.random_range(0.1..=10.0)).collect();
    let kappa = rng.random_range(0.1..=5.0);
    RateSchedule::from_arrays(Extent::Finite(n), lambda, mu, kappa).unwrap()
}

fn theorem_closure() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED_THEOREM);
    let (mut first, mut second) = (0.0f64, 0.0f64);
    for _ in 0..200 {
        let s = random_schedule(&mut rng, 50);
        let b = solve_absorption_b(&s, DEFAULT_TOL).unwrap();
        let a = solve_tail_a(&s, DEFAULT_TOL).unwrap();
        for (i, r) in relate_b_from_a(&a, &s).unwrap().iter() {
            first = first.max(rel(r, b.at(i) / b.at(1)));
        }
        for (i, r) in relate_a_from_b(&b, &s).unwrap().iter() {
            second = second.max(rel(r, a.at(i) / a.at(1)));
        }
    }
    let elapsed = start.elapsed();
    Outcome {
        pass: first <= 1e-9 && second <= 1e-9 && elapsed < Duration::from_secs(30),
        detail: format!(
            "200 schedules, max rel err b-from-a {first:.2e}, a-from-b {second:.2e} (tol 1e-9), {:.2} s (limit 30 s)",
            elapsed.as_secs_f64()
        ),
    }
}

fn micro_instance() -> Outcome {
    let s = RateSchedule::from_arrays(Extent::Finite(2), vec![1.0], vec![1.0, 1.0], 1.0).unwrap();
    let b = solve_absorption_b(&s, DEFAULT_TOL).unwrap();
    let a = solve_tail_a(&s, DEFAULT_TOL).unwrap();
    let w = stationary_distribution(&build_generator(ProcessKind::Z, &s).unwrap(), DEFAULT_TOL)
        .unwrap();
    let rho_dual = stationary_distribution(
        &build_generator(ProcessKind::XStar, &s).unwrap(),
        DEFAULT_TOL,
    )
    .unwrap();
    let gap = |x: &[f64], y: &[f64]| {
        assert_eq!(x.len(), y.len());
        x.iter()
            .zip(y)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max)
    };
    let worst = [
        gap(&b.values, &[1.0, 2.0 / 5.0, 1.0 / 5.0]),
        gap(&w.values, &[2.0 / 3.0, 1.0 / 3.0]),
        gap(&a.values, &[1.0, 1.0 / 3.0, 0.0]),
        gap(&[b.at(2) / b.at(1)], &[0.5]),
        gap(&rho_from_b(&b).values, &[3.0 / 5.0, 1.0 / 5.0, 1.0 / 5.0]),
        gap(&rho_dual.values, &[3.0 / 5.0, 1.0 / 5.0, 1.0 / 5.0]),
    ]
    .into_iter()
    .fold(0.0, f64::max);
    Outcome {
        pass: worst <= 1e-12,
        detail: format!("b, w, a, c1, rho: max abs err {worst:.2e} (tol 1e-12)"),
    }
}

fn siegmund_duality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED_DUALITY);
    let (mut x, mut z) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let s = random_schedule(&mut rng, 20);
        for (primal, dual, worst) in [
            (ProcessKind::X, ProcessKind::XStar, &mut x),
            (ProcessKind::Z, ProcessKind::ZStar, &mut z),
        ] {
            let g = build_generator(primal, &s).unwrap();
            let d = build_generator(dual, &s).unwrap();
            let r = verify_duality(&g, &d, &[0.1, 1.0, 10.0], 1e-8);
            *worst = worst.max(r.max_discrepancy);
        }
    }
    Outcome {
        pass: x <= 1e-8 && z <= 1e-8,
        detail: format!(
            "50 schedules, t in {{0.1, 1, 10}}, max discrepancy (X,X*) {x:.2e}, (Z,Z*) {z:.2e} (tol 1e-8)"
        ),
    }
}

fn correspondences() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED_CORRESPONDENCE);
    let (mut tail, mut absorb, mut bar) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..50 {
        let s = random_schedule(&mut rng, 20);
        let b = solve_absorption_b(&s, DEFAULT_TOL).unwrap();
        let a = solve_tail_a(&s, DEFAULT_TOL).unwrap();
        let xs = build_generator(ProcessKind::XStar, &s).unwrap();
        let rho = stationary_distribution(&xs, DEFAULT_TOL).unwrap();
        // Tail of the dual's stationary law: Σ_{j>i} ρ_j = b_i.
        let mut t = 1.0;
        for (i, r) in rho.iter() {
            tail = tail.max((t - b.at(i - 1)).abs());
            t -= r;
        }
        let zs = build_generator(ProcessKind::ZStar, &s).unwrap();
        for i in 2..=s.top() {
            let p = first_passage_prob(&zs, State::Site(i as i64), &[State::Site(1)], &[]).unwrap();
            absorb = absorb.max((p - a.at(i as i64 - 1)).abs());
        }
        for (i, r) in bar_absorption_ratios(&s, None).unwrap().iter() {
            bar = bar.max(rel(r, a.at(i) / a.at(1)));
        }
    }
    Outcome {
        pass: tail <= 1e-10 && absorb <= 1e-10 && bar <= 1e-9,
        detail: format!(
            "50 schedules, X* tail vs b {tail:.2e} (tol 1e-10), Z* absorption vs a {absorb:.2e} (tol 1e-10), bar ratios {bar:.2e} (tol 1e-9)"
        ),
    }
}

fn z_score(e: &Estimate, target: f64) -> f64 {
    (e.value - target) / e.stderr
}

fn monte_carlo_lemmas() -> Outcome {
    let start = Instant::now();
    let s = RateSchedule::from_arrays(
        Extent::Finite(8),
        vec![1.2, 0.8, 1.5, 1.0, 0.9, 1.4, 0.6],
        vec![1.0, 0.7, 1.3, 0.9, 1.1, 1.2, 0.8, 1.0],
        0.4,
    )
    .unwrap();
    let level = 3;
    let cfg = SimConfig {
        seed: SEED_MC,
        replicates: 100_000,
        ..SimConfig::default()
    };
    let stats = excursion_statistics(&s, level, &cfg).unwrap();
    let exact = exact_excursion(&s, level).unwrap();
    let z = build_generator(ProcessKind::Z, &s).unwrap();
    let w = estimate_stationary(
        &z,
        None,
        &SimConfig {
            replicates: 256,
            ..cfg.clone()
        },
    )
    .unwrap();
    let balance = detailed_balance_gap(&s, &stats, &w).unwrap();
    let zs = [
        ("c", z_score(&stats.c_direct, exact.c)),
        ("balance", z_score(&balance, 0.0)),
        ("return", z_score(&stats.return_gap, 0.0)),
    ];
    let p_value = stats.geometric.p_value.unwrap_or(f64::NAN);
    let elapsed = start.elapsed();
    let within = zs.iter().all(|(_, z)| z.abs() <= 3.0);
    let list: Vec<String> = zs.iter().map(|(n, z)| format!("{n} z={z:+.2}")).collect();
    Outcome {
        pass: within && p_value > 0.01 && elapsed < Duration::from_secs(120),
        detail: format!(
            "N=8, n={level}, 1e5 replicates: {} (band 3), geometric chi-square p={p_value:.3} (> 0.01), {:.1} s (limit 120 s)",
            list.join(", "),
            elapsed.as_secs_f64()
        ),
    }
}

fn random_moran(rng: &mut ChaCha8Rng, max_n: usize) -> MoranParams {
    MoranParams::new(
        rng.random_range(1..=max_n),
        rng.random_range(0.0..=3.0),
        rng.random_range(0.01..=2.0),
        rng.random_range(0.05..=0.95),
    )
    .unwrap()
}

fn moran_moments_gap(p: &MoranParams) -> f64 {
    let pi = moran_forward(p).unwrap().pi;
    let b = solve_absorption_b(&p.kasg_schedule().unwrap(), DEFAULT_TOL).unwrap();
    (0..=p.n)
        .map(|i| (sampling_moments(&pi, i).unwrap() - b.at(i as i64)).abs())
        .fold(0.0, f64::max)
}

fn finite_application() -> Outcome {
    let hand = MoranParams::new(2, 1.0, 1.0, 0.5).unwrap();
    let pi = moran_forward(&hand).unwrap().pi;
    let b = solve_absorption_b(&hand.kasg_schedule().unwrap(), DEFAULT_TOL).unwrap();
    let mut hand_err: f64 = 0.0;
    for (i, (pe, be)) in [(3.0, 7.0), (2.0, 3.0), (2.0, 2.0)].iter().enumerate() {
        hand_err = hand_err.max((pi.at(i as i64) - pe / 7.0).abs());
        hand_err = hand_err.max((b.at(i as i64) - be / 7.0).abs());
    }
    hand_err = hand_err.max(moran_moments_gap(&hand));
    let mut rng = ChaCha8Rng::seed_from_u64(SEED_MORAN);
    let mut moments: f64 = 0.0;
    for _ in 0..100 {
        moments = moments.max(moran_moments_gap(&random_moran(&mut rng, 40)));
    }
    let mut identities: f64 = 0.0;
    let mut all_pass = true;
    for _ in 0..100 {
        let r = finite_relations(&random_moran(&mut rng, 40)).unwrap();
        all_pass &= r.pass;
        for c in &r.checks {
            identities = identities.max(c.max_rel_error);
        }
    }
    Outcome {
        pass: hand_err <= 1e-10 && moments <= 1e-10 && identities <= 1e-9 && all_pass,
        detail: format!(
            "N=2 hand case {hand_err:.2e}, 100 random sets moments vs absorption {moments:.2e} (tol 1e-10), 100 random sets N<=40 identities {identities:.2e} (tol 1e-9)"
        ),
    }
}

fn diffusion_application() -> Outcome {
    let mut neutral: f64 = 0.0;
    for (theta, nu0) in [(0.5, 0.5), (2.0, 0.25), (7.0, 0.9)] {
        let p = DiffusionParams::new(0.0, theta, nu0).unwrap();
        let beta = wright_moments(&p, 20, 1e-12).unwrap();
        let alpha = fearnhead_tails(&p, 20, 1e-12).unwrap();
        let mut exact = 1.0;
        for i in 0..=20 {
            neutral = neutral.max((beta.at(i) - exact).abs());
            exact *= (theta * p.nu1 + i as f64) / (theta + i as f64);
            if i > 0 {
                neutral = neutral.max(alpha.at(i).abs());
            }
        }
        for k in 0..=20 {
            let y = k as f64 / 20.0;
            let g = ancestral_type_prob_diffusion(&alpha, y, SumIndexing::Shifted).unwrap();
            neutral = neutral.max((g - y).abs());
        }
    }
    let grid = [0.1, 0.5, 1.0, 3.0, 10.0];
    let mut routes: f64 = 0.0;
    let mut all_pass = true;
    for &sigma in &grid {
        for &theta in &grid {
            let p = DiffusionParams::new(sigma, theta, 0.5).unwrap();
            let r = diffusion_relations(&p, 12, 1e-12).unwrap();
            all_pass &= r.pass;
            for c in &r.checks {
                routes = routes.max(c.max_rel_error);
            }
        }
    }
    let p = DiffusionParams::new(1.0, 1.0, 0.5).unwrap();
    let alpha = fearnhead_tails(&p, 400, 1e-12).unwrap();
    let a = solve_tail_a(
        &p.moran(200).unwrap().pldasg_schedule().unwrap(),
        DEFAULT_TOL,
    )
    .unwrap();
    let mut sup: f64 = 0.0;
    for i in 0..=200 {
        let g = ancestral_type_prob_finite(&a, i, SumIndexing::Shifted).unwrap();
        let gamma =
            ancestral_type_prob_diffusion(&alpha, i as f64 / 200.0, SumIndexing::Shifted).unwrap();
        sup = sup.max((g - gamma).abs());
    }
    Outcome {
        pass: neutral <= 1e-10 && routes <= 1e-8 && all_pass && sup <= 0.02,
        detail: format!(
            "neutral closed forms {neutral:.2e} (tol 1e-10), 25 (sigma, theta) pairs route agreement {routes:.2e} (tol 1e-8), sup |g_200 - gamma| {sup:.4} (tol 0.02)"
        ),
    }
}

fn run_cli(config: &std::path::Path, args: &[&str]) -> Vec<u8> {
    let out = Command::new(env!("CARGO_BIN_EXE_bdcat"))
        .args(args)
        .arg("--config")
        .arg(config)
        .output()
        .expect("bdcat binary runs");
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out.stdout
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let base = format!(
        "[schedule]\nextent = 5\nlambda = [1.2, 0.8, 1.5, 1.0]\nmu = [1.0, 0.7, 1.3, 0.9, 1.1]\n\
         kappa = 0.4\n[simulation]\nseed = {SEED_DETERMINISM}\nreplicates = 20000\n[options]\nlevel = 2\n"
    );
    let runs = [
        ("simulate", "absorption", ""),
        ("simulate", "stationary", "estimate = \"stationary\"\n"),
        ("excursions", "excursions", ""),
    ];
    let mut identical = 0;
    for (k, (command, _, extra)) in runs.iter().enumerate() {
        let config = dir.path().join(format!("run{k}.toml"));
        std::fs::write(&config, format!("{base}{extra}")).unwrap();
        let first = run_cli(&config, &[command]);
        let second = run_cli(&config, &[command]);
        if first == second && !first.is_empty() {
            identical += 1;
        }
    }
    let names: Vec<&str> = runs.iter().map(|r| r.1).collect();
    Outcome {
        pass: identical == runs.len(),
        detail: format!(
            "{identical}/{} runs ({}) byte-identical JSON on rerun",
            runs.len(),
            names.join(", ")
        ),
    }
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("1 ratio identities, both directions", theorem_closure),
        ("2 two-state micro-instance", micro_instance),
        ("3 Siegmund duality at finite times", siegmund_duality),
        (
            "4 dual stationary and absorption correspondences",
            correspondences,
        ),
        ("5 excursion lemmas by Monte Carlo", monte_carlo_lemmas),
        ("6 finite Moran application", finite_application),
        ("7 diffusion application", diffusion_application),
        ("8 determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = check();
        let status = if outcome.pass { "PASS" } else { "FAIL" };
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "{status} [{name}] {} [{:.2} s]",
            outcome.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
