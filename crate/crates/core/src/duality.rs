//! Siegmund duality and the identities linking absorption probabilities of
//! the killed process with stationary tails of the catastrophe process.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generator::{build_generator, Generator, ProcessKind, State};
use crate::schedule::{bar_transform, bar_transform_with_boundary, RateSchedule};
use crate::solvers::{
    first_passage_prob, solve_absorption_b, transition_matrix, SolutionVector, DEFAULT_TOL,
};

/// Dual rates within this size of zero (relative to the largest exit rate)
/// are treated as rounding noise.
const CLAMP: f64 = 1e-12;

/// A dual generator together with the states that have neither incoming nor
/// outgoing rates.
#[derive(Clone, Debug)]
pub struct DualGenerator {
    pub generator: Generator,
    pub isolated: Vec<State>,
}

impl DualGenerator {
    /// Drops isolated states at the ends of the range (the lowest site and `Δ`).
    pub fn restrict(&self) -> Generator {
        let g = &self.generator;
        let mut lo = g.lo();
        while lo < g.hi() && self.isolated.contains(&State::Site(lo)) {
            lo += 1;
        }
        let mut hi = g.hi();
        let cemetery = g.has_cemetery() && !self.isolated.contains(&State::Cemetery);
        if !cemetery {
            while hi > lo && self.isolated.contains(&State::Site(hi)) {
                hi -= 1;
            }
        }
        let mut rates = Vec::new();
        for i in 0..g.len() {
            let from = g.state(i);
            for (j, r) in g.transitions(i) {
                rates.push((from, g.state(j), r));
            }
        }
        Generator::from_rates(lo, hi, cemetery, rates).expect("isolated states carry no rates")
    }
}

/// The Siegmund dual `q*(y,x) = Σ_{k≥y} q(x,k) − Σ_{k≥y} q(x−1,k)` over the
/// ordered states of `gen` (with `Δ` on top), plus one new top state that
/// plays the role of `Δ` for the dual.
///
/// The primal `Δ`, if any, becomes the site `hi+1`.
pub fn siegmund_dual(gen: &Generator) -> Result<DualGenerator> {
    let m = gen.len();
    let q = gen.to_dense();
    // tails[x][y] = Σ_{k ≥ y} q(x, k)
    let mut tails = vec![vec![0.0; m + 1]; m];
    for x in 0..m {
        for y in (0..m).rev() {
            tails[x][y] = tails[x][y + 1] + q[(x, y)];
        }
    }
    let scale = gen.max_exit_rate().max(1.0);
    let lo = gen.lo();
    let label = |p: usize| {
        if p == m {
            State::Cemetery
        } else {
            State::Site(lo + p as i64)
        }
    };
    let mut rates = Vec::new();
    let mut push = |y: usize, x: usize, v: f64| -> Result<()> {
        if v < -CLAMP * scale {
            return Err(Error::NotMonotone {
                from: label(y),
                to: label(x),
                rate: v,
            });
        }
        if v > CLAMP * scale {
            rates.push((label(y), label(x), v));
        }
        Ok(())
    };
    for y in 0..m {
        for x in 0..m {
            if x == y {
                continue;
            }
            let below = if x == 0 { 0.0 } else { tails[x - 1][y] };
            push(y, x, tails[x][y] - below)?;
        }
        push(y, m, -tails[m - 1][y])?;
    }
    let generator = Generator::from_rates(lo, lo + m as i64 - 1, true, rates)?;
    let mut has_in = vec![false; generator.len()];
    for i in 0..generator.len() {
        generator.for_each_transition(i, |j, _| has_in[j] = true);
    }
    let isolated = (0..generator.len())
        .filter(|&i| generator.is_absorbing(i) && !has_in[i])
        .map(|i| generator.state(i))
        .collect();
    Ok(DualGenerator {
        generator,
        isolated,
    })
}

/// `|P(X_t ≥ y | x) − P(x ≥ X*_t | y)|` for one grid point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairDiscrepancy {
    pub x: State,
    pub y: State,
    pub t: f64,
    pub discrepancy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DualityReport {
    pub times: Vec<f64>,
    /// Number of `(x, x*)` pairs evaluated per time.
    pub pairs: usize,
    pub max_per_time: Vec<f64>,
    pub max_discrepancy: f64,
    pub tolerance: f64,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<Vec<PairDiscrepancy>>,
}

/// Grids with at most this many primal states are checked exhaustively.
pub const FULL_GRID_LIMIT: usize = 64;
const SUBSAMPLE: usize = 256;

/// Checks `P(X_t ≥ y | X_0 = x) = P(x ≥ X*_t | X*_0 = y)` on the full grid
/// (or a fixed pseudo-random subsample of 256 pairs for large generators).
pub fn verify_duality(gen: &Generator, dual: &Generator, times: &[f64], tol: f64) -> DualityReport {
    verify_duality_with(gen, dual, times, tol, false)
}

/// [`verify_duality`] that also returns every per-pair discrepancy when `verbose`.
pub fn verify_duality_with(
    gen: &Generator,
    dual: &Generator,
    times: &[f64],
    tol: f64,
    verbose: bool,
) -> DualityReport {
    let (n, d) = (gen.len(), dual.len());
    let pairs: Vec<(usize, usize)> = if n <= FULL_GRID_LIMIT {
        (0..n).flat_map(|x| (0..d).map(move |y| (x, y))).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_d0a1);
        let mut picked: Vec<(usize, usize)> = sample(&mut rng, n * d, SUBSAMPLE.min(n * d))
            .into_iter()
            .map(|k| (k / d, k % d))
            .collect();
        picked.sort_unstable();
        picked
    };
    let xv: Vec<i64> = (0..n).map(|i| gen.order_value(gen.state(i))).collect();
    let yv: Vec<i64> = (0..d).map(|i| dual.order_value(dual.state(i))).collect();
    let mut max_per_time = Vec::with_capacity(times.len());
    let mut details = verbose.then(Vec::new);
    for &t in times {
        let p = transition_matrix(gen, t);
        let ps = transition_matrix(dual, t);
        let mut worst: f64 = 0.0;
        for &(x, y) in &pairs {
            let lhs: f64 = (0..n).filter(|&z| xv[z] >= yv[y]).map(|z| p[(x, z)]).sum();
            let rhs: f64 = (0..d).filter(|&z| xv[x] >= yv[z]).map(|z| ps[(y, z)]).sum();
            let disc = (lhs - rhs).abs();
            worst = worst.max(disc);
            if let Some(v) = details.as_mut() {
                v.push(PairDiscrepancy {
                    x: gen.state(x),
                    y: dual.state(y),
                    t,
                    discrepancy: disc,
                });
            }
        }
        max_per_time.push(worst);
    }
    let max_discrepancy = max_per_time.iter().copied().fold(0.0, f64::max);
    DualityReport {
        times: times.to_vec(),
        pairs: pairs.len(),
        max_per_time,
        max_discrepancy,
        tolerance: tol,
        pass: max_discrepancy <= tol,
        details,
    }
}

/// `Π_{j=1}^{i-1} μ_{j+1}/λ_j`: the inverse stationary weight of state `i`
/// (relative to state 1) of the catastrophe-free chain.
pub fn reversible_weight(sched: &RateSchedule, i: usize) -> Result<f64> {
    product_between(sched, 1, i)
}

/// `Π_{j=k}^{i-1} μ_{j+1}/λ_j` for `k ≤ i`.
fn product_between(sched: &RateSchedule, k: usize, i: usize) -> Result<f64> {
    let mut p = 1.0;
    for j in k..i {
        let lam = sched.lambda(j);
        if lam == 0.0 {
            return Err(Error::DegenerateDenominator("birth-rate product (λ_j = 0)"));
        }
        p *= sched.mu(j + 1) / lam;
    }
    Ok(p)
}

fn tail_differences(a: &SolutionVector) -> Result<Vec<f64>> {
    if a.lo != 0 || a.values.len() < 2 {
        return Err(Error::invalid(
            "a",
            None,
            "tail vector must start at index 0 and have length ≥ 2",
        ));
    }
    // w[i] = a_{i-1} - a_i for i ≥ 1; w[0] unused
    let mut w = vec![0.0; a.values.len()];
    for i in 1..a.values.len() {
        w[i] = a.values[i - 1] - a.values[i];
    }
    Ok(w)
}

/// `b_i / b_1` over `[1:N]` from the stationary tails of the paired catastrophe process.
pub fn relate_b_from_a(a: &SolutionVector, sched: &RateSchedule) -> Result<SolutionVector> {
    relative_b_ratios(a, sched, 1)
}

/// `b_i / b_k` over `[1:N]` from the tails `a`: the product may start at any `k`.
pub fn relative_b_ratios(
    a: &SolutionVector,
    sched: &RateSchedule,
    k: usize,
) -> Result<SolutionVector> {
    let w = tail_differences(a)?;
    let top = w.len() - 1;
    if k == 0 || k > top {
        return Err(Error::Range {
            n: k,
            lo: 1,
            hi: top,
        });
    }
    if w[k] == 0.0 {
        return Err(Error::DegenerateDenominator("a_{k-1} - a_k"));
    }
    let mut values = Vec::with_capacity(top);
    for i in 1..=top {
        let r = if i >= k {
            w[i] / w[k] * product_between(sched, k, i)?
        } else {
            let p = product_between(sched, i, k)?;
            if p == 0.0 {
                return Err(Error::DegenerateDenominator("death-rate product (μ_j = 0)"));
            }
            w[i] / w[k] / p
        };
        values.push(r);
    }
    let label = if k == 1 {
        "b_ratio".to_string()
    } else {
        format!("b_ratio_k{k}")
    };
    Ok(SolutionVector::new(&label, 1, values))
}

/// `a_i / a_1` over `[1:N-1]` from the absorption probabilities `b`.
/// Requires `μ_i > 0` on the whole range.
pub fn relate_a_from_b(b: &SolutionVector, sched: &RateSchedule) -> Result<SolutionVector> {
    if b.lo != 0 || b.values.len() < 3 {
        return Err(Error::invalid(
            "b",
            None,
            "absorption vector must start at 0 and reach index 2",
        ));
    }
    let top = b.values.len() - 1;
    if let Some(i) = (1..=top).find(|&i| sched.mu(i) <= 0.0) {
        return Err(Error::HypothesisViolated(format!(
            "μ_{i} = 0; the identity needs μ_i > 0 throughout"
        )));
    }
    let v = &b.values;
    let denom = v[1] - v[2];
    if denom == 0.0 {
        return Err(Error::DegenerateDenominator("b_1 - b_2"));
    }
    let mut values = Vec::with_capacity(top - 1);
    let mut prod = 1.0;
    for i in 1..top {
        if i > 1 {
            prod *= sched.lambda(i) / sched.mu(i);
        }
        values.push((v[i] - v[i + 1]) / denom * prod);
    }
    Ok(SolutionVector::new("a_ratio", 1, values))
}

/// Stationary law of the dual of the killed process: `ρ_i = b_{i-1} - b_i`
/// for `i ∈ [1:N]` and `ρ_{N+1} = b_N`.
pub fn rho_from_b(b: &SolutionVector) -> SolutionVector {
    let v = &b.values;
    let mut rho: Vec<f64> = (1..v.len()).map(|i| v[i - 1] - v[i]).collect();
    rho.push(*v.last().expect("non-empty"));
    SolutionVector::new("rho", b.lo + 1, rho)
}

/// `b̄_{i+1}/b̄_2` for `i ∈ [2:N]` on the bar process.
///
/// With the default boundary `μ̄_1 = 0` the bar absorption probabilities
/// vanish, so the ratio is computed as `P_{i+1}(T_2 < T_Δ)` on the bar chain.
/// Passing `Some(λ₀) > 0` instead divides the bar absorption probabilities.
pub fn bar_absorption_ratios(sched: &RateSchedule, lambda0: Option<f64>) -> Result<SolutionVector> {
    let top = sched.top();
    let mut values = Vec::new();
    match lambda0 {
        None => {
            let bar = bar_transform(sched)?;
            let xbar = build_generator(ProcessKind::X, &bar)?;
            for i in 2..=top {
                values.push(first_passage_prob(
                    &xbar,
                    State::Site(i as i64 + 1),
                    &[State::Site(2)],
                    &[],
                )?);
            }
        }
        Some(l0) => {
            let bar = bar_transform_with_boundary(sched, l0)?;
            let b = solve_absorption_b(&bar, DEFAULT_TOL)?;
            let b2 = b.at(2);
            if b2 == 0.0 {
                return Err(Error::DegenerateDenominator("b̄_2"));
            }
            for i in 2..=top {
                values.push(b.at(i as i64 + 1) / b2);
            }
        }
    }
    Ok(SolutionVector::new("bar_ratio", 2, values))
}
