use bdcat::duality::{
    bar_absorption_ratios, relate_a_from_b, relate_b_from_a, relative_b_ratios, rho_from_b,
    siegmund_dual, verify_duality,
};
use bdcat::generator::{build_generator, Generator, ProcessKind, State};
use bdcat::schedule::{Extent, RateSchedule};
use bdcat::solvers::{
    first_passage_prob, solve_absorption_b, solve_tail_a, stationary_distribution, DEFAULT_TOL,
};
use proptest::prelude::*;

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn schedule(max_n: usize) -> impl Strategy<Value = RateSchedule> {
    (2..=max_n).prop_flat_map(|n| {
        (
            prop::collection::vec(0.1f64..10.0, n - 1),
            prop::collection::vec(0.1f64..10.0, n),
            0.1f64..5.0,
        )
            .prop_map(move |(lambda, mu, kappa)| {
                RateSchedule::from_arrays(Extent::Finite(n), lambda, mu, kappa).unwrap()
            })
    })
}

fn same_rates(a: &Generator, b: &Generator) -> f64 {
    assert_eq!(
        a.states().collect::<Vec<_>>(),
        b.states().collect::<Vec<_>>()
    );
    let mut worst: f64 = 0.0;
    for i in 0..a.len() {
        for j in 0..a.len() {
            if i != j {
                worst = worst.max((a.rate_idx(i, j) - b.rate_idx(i, j)).abs() / a.max_exit_rate());
            }
        }
    }
    worst
}

#[test]
fn micro_instance() {
    let s = RateSchedule::from_arrays(Extent::Finite(2), vec![1.0], vec![1.0, 1.0], 1.0).unwrap();
    let b = solve_absorption_b(&s, DEFAULT_TOL).unwrap();
    let a = solve_tail_a(&s, DEFAULT_TOL).unwrap();
    let w = stationary_distribution(&build_generator(ProcessKind::Z, &s).unwrap(), DEFAULT_TOL)
        .unwrap();
    let rho = rho_from_b(&b);
    let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| (p - q).abs() <= 1e-12);
    assert!(close(&b.values, &[1.0, 0.4, 0.2]));
    assert!(close(&a.values, &[1.0, 1.0 / 3.0, 0.0]));
    assert!(close(&w.values, &[2.0 / 3.0, 1.0 / 3.0]));
    assert!(close(&rho.values, &[0.6, 0.2, 0.2]));
    assert!((b.at(2) / b.at(1) - 0.5).abs() <= 1e-12);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn absorption_ratios_from_tails(s in schedule(30)) {
        let b = solve_absorption_b(&s, DEFAULT_TOL).unwrap();
        let a = solve_tail_a(&s, DEFAULT_TOL).unwrap();
        let ratios = relate_b_from_a(&a, &s).unwrap();
        for (i, r) in ratios.iter() {
            prop_assert!(rel(r, b.at(i) / b.at(1)) <= 1e-9, "i = {}", i);
        }
    }

    #[test]
    fn ratios_from_any_base_index(s in schedule(15), k in 1usize..15) {
        let k = k.min(s.top());
        let b = solve_absorption_b(&s, DEFAULT_TOL).unwrap();
        let a = solve_tail_a(&s, DEFAULT_TOL).unwrap();
        let ratios = relative_b_ratios(&a, &s, k).unwrap();
        for (i, r) in ratios.iter() {
            prop_assert!(rel(r, b.at(i) / b.at(k as i64)) <= 1e-9);
        }
    }

    #[test]
    fn tail_ratios_from_absorption(s in schedule(30)) {
        let b = solve_absorption_b(&s, DEFAULT_TOL).unwrap();
        let a = solve_tail_a(&s, DEFAULT_TOL).unwrap();
        let ratios = relate_a_from_b(&b, &s).unwrap();
        for (i, r) in ratios.iter() {
            prop_assert!(rel(r, a.at(i) / a.at(1)) <= 1e-9, "i = {}", i);
        }
    }

    #[test]
    fn tails_are_stationary_tails(s in schedule(20)) {
        let a = solve_tail_a(&s, DEFAULT_TOL).unwrap();
        let w = stationary_distribution(&build_generator(ProcessKind::Z, &s).unwrap(), DEFAULT_TOL).unwrap();
        let mut tail = 1.0;
        for (i, wi) in w.iter() {
            tail -= wi;
            prop_assert!((a.at(i) - tail.max(0.0)).abs() <= 1e-10);
        }
    }

    #[test]
    fn detailed_balance_across_levels(s in schedule(12)) {
        let b = solve_absorption_b(&s, DEFAULT_TOL).unwrap();
        let w = stationary_distribution(&build_generator(ProcessKind::Z, &s).unwrap(), DEFAULT_TOL).unwrap();
        for n in 1..s.top() {
            let c = b.at(n as i64 + 1) / b.at(n as i64);
            let lhs = s.lambda(n) * w.at(n as i64) * c;
            prop_assert!(rel(lhs, s.mu(n + 1) * w.at(n as i64 + 1)) <= 1e-9);
        }
    }

    #[test]
    fn level_pieces_are_conditioned_laws(s in schedule(12), level in 1usize..12) {
        let n = level.min(s.top() - 1);
        let w = stationary_distribution(&build_generator(ProcessKind::Z, &s).unwrap(), DEFAULT_TOL).unwrap();
        let wn = stationary_distribution(&build_generator(ProcessKind::Zn(n), &s).unwrap(), DEFAULT_TOL).unwrap();
        let mass: f64 = (n..=s.top()).map(|i| w.at(i as i64)).sum();
        for (i, v) in wn.iter() {
            prop_assert!(rel(v, w.at(i) / mass) <= 1e-9);
        }
    }

    #[test]
    fn dual_stationary_tails_are_absorption(s in schedule(20)) {
        let b = solve_absorption_b(&s, DEFAULT_TOL).unwrap();
        let xs = build_generator(ProcessKind::XStar, &s).unwrap();
        let rho = stationary_distribution(&xs, DEFAULT_TOL).unwrap();
        let exact = rho_from_b(&b);
        for (i, r) in rho.iter() {
            prop_assert!((r - exact.at(i)).abs() <= 1e-10);
        }
    }

    #[test]
    fn dual_absorption_is_tails(s in schedule(20)) {
        let a = solve_tail_a(&s, DEFAULT_TOL).unwrap();
        let zs = build_generator(ProcessKind::ZStar, &s).unwrap();
        for i in 2..=s.top() {
            let p = first_passage_prob(&zs, State::Site(i as i64), &[State::Site(1)], &[]).unwrap();
            prop_assert!((p - a.at(i as i64 - 1)).abs() <= 1e-10, "i = {}", i);
        }
    }

    #[test]
    fn bar_absorption_matches_tail_ratios(s in schedule(20)) {
        let a = solve_tail_a(&s, DEFAULT_TOL).unwrap();
        let bar = bar_absorption_ratios(&s, None).unwrap();
        for (i, r) in bar.iter() {
            prop_assert!(rel(r, a.at(i) / a.at(1)) <= 1e-9, "i = {}", i);
        }
    }

    #[test]
    fn computed_duals_match_constructed_duals(s in schedule(15)) {
        for (primal, dual) in [(ProcessKind::X, ProcessKind::XStar), (ProcessKind::Z, ProcessKind::ZStar)] {
            let g = build_generator(primal, &s).unwrap();
            let d = siegmund_dual(&g).unwrap().restrict();
            prop_assert!(same_rates(&d, &build_generator(dual, &s).unwrap()) <= 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn transient_duality(s in schedule(10)) {
        for (primal, dual) in [(ProcessKind::X, ProcessKind::XStar), (ProcessKind::Z, ProcessKind::ZStar)] {
            let g = build_generator(primal, &s).unwrap();
            let d = build_generator(dual, &s).unwrap();
            let r = verify_duality(&g, &d, &[0.1, 1.0, 10.0], 1e-8);
            prop_assert!(r.pass, "{:?} max {}", primal, r.max_discrepancy);
        }
    }
}
