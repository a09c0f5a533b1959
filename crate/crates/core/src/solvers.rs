//! Exact computation of absorption probabilities `b`, stationary tails `a`,
//! stationary distributions, first-passage probabilities and transient laws.
//!
//! The `b` and `a` recursions are tridiagonal M-matrix systems; the two-sweep
//! elimination then has componentwise relative accuracy, which matters for
//! the tiny tail values far from the origin. Infinite extents are handled by
//! an artificial zero boundary at level `L`, doubled until the values on the
//! reported range stop moving.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::generator::{Generator, State};
use crate::schedule::RateSchedule;

/// Default absolute tolerance for residuals and refinement changes.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Largest truncation level tried before giving up.
pub const MAX_TRUNCATION: usize = 1 << 20;

/// One step of truncation refinement.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Refinement {
    pub level: usize,
    /// Sup-norm change on the reported range relative to the previous level
    /// (`None` for the first level).
    pub sup_change: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SolveMeta {
    /// Final truncation level, for infinite extents.
    pub truncation: Option<usize>,
    /// Sup-norm residual of the defining linear system.
    pub residual: f64,
    pub history: Vec<Refinement>,
}

/// Probabilities indexed by a contiguous integer range `[lo : lo+len-1]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SolutionVector {
    pub label: String,
    pub lo: i64,
    pub values: Vec<f64>,
    pub meta: SolveMeta,
}

impl SolutionVector {
    pub fn new(label: &str, lo: i64, values: Vec<f64>) -> Self {
        SolutionVector {
            label: label.to_string(),
            lo,
            values,
            meta: SolveMeta::default(),
        }
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.values.len() as i64 - 1
    }

    pub fn get(&self, i: i64) -> Option<f64> {
        if i < self.lo {
            return None;
        }
        self.values.get((i - self.lo) as usize).copied()
    }

    /// Value at `i`; panics outside the range.
    pub fn at(&self, i: i64) -> f64 {
        self.get(i).unwrap_or_else(|| {
            panic!(
                "index {i} outside [{}:{}] of `{}`",
                self.lo,
                self.hi(),
                self.label
            )
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(k, &v)| (self.lo + k as i64, v))
    }
}

/// Solves a tridiagonal system; `sub[k]` multiplies `x[k-1]` and `sup[k]`
/// multiplies `x[k+1]`.
pub fn solve_tridiagonal(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    assert!(sub.len() == n && sup.len() == n && rhs.len() == n);
    if n == 0 {
        return Ok(Vec::new());
    }
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    for k in 0..n {
        if k > 0 {
            pivot = diag[k] - sub[k] * c[k - 1];
        }
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::SingularSystem(format!(
                "zero pivot in tridiagonal row {k}"
            )));
        }
        c[k] = sup[k] / pivot;
        d[k] = (rhs[k] - if k > 0 { sub[k] * d[k - 1] } else { 0.0 }) / pivot;
    }
    let mut x = d;
    for k in (0..n - 1).rev() {
        x[k] -= c[k] * x[k + 1];
    }
    Ok(x)
}

/// `b` on `[0:top]` with `b_top` given by the last recursion row (finite) or
/// forced to zero (truncated).
fn b_at_level(sched: &RateSchedule, top: usize, zero_boundary: bool) -> Result<Vec<f64>> {
    let k = sched.kappa();
    let m = if zero_boundary { top - 1 } else { top };
    let (mut sub, mut diag, mut sup, mut rhs) =
        (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for row in 0..m {
        let i = row + 1;
        let lam = if i < top { sched.lambda(i) } else { 0.0 };
        let mu = sched.mu(i);
        diag[row] = lam + mu + k;
        sup[row] = if row + 1 < m { -lam } else { 0.0 };
        if row == 0 {
            rhs[row] = mu;
        } else {
            sub[row] = -mu;
        }
    }
    let x = solve_tridiagonal(&sub, &diag, &sup, &rhs)?;
    let mut b = Vec::with_capacity(top + 1);
    b.push(1.0);
    b.extend(x);
    if zero_boundary {
        b.push(0.0);
    }
    Ok(b)
}

/// `a` on `[0:top]` with `a_top = 0`.
fn a_at_level(sched: &RateSchedule, top: usize) -> Result<Vec<f64>> {
    let k = sched.kappa();
    let m = top - 1;
    let (mut sub, mut diag, mut sup, mut rhs) =
        (vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]);
    for row in 0..m {
        let i = row + 1;
        let lam = sched.lambda(i);
        let mu_next = sched.mu(i + 1);
        diag[row] = mu_next + lam + k;
        sup[row] = if row + 1 < m { -mu_next } else { 0.0 };
        if row == 0 {
            rhs[row] = lam;
        } else {
            sub[row] = -lam;
        }
    }
    let x = solve_tridiagonal(&sub, &diag, &sup, &rhs)?;
    let mut a = Vec::with_capacity(top + 1);
    a.push(1.0);
    a.extend(x);
    a.push(0.0);
    Ok(a)
}

/// Sup-norm residual of the `b` recursion over `[1:upto]`; `b` must extend to `upto+1`
/// unless `upto` is the finite top.
pub fn b_residual(sched: &RateSchedule, b: &[f64], upto: usize) -> f64 {
    let k = sched.kappa();
    (1..=upto)
        .map(|i| {
            let next = b.get(i + 1).copied().unwrap_or(0.0);
            let lam = sched.lambda(i);
            let mu = sched.mu(i);
            ((lam + mu + k) * b[i] - lam * next - mu * b[i - 1]).abs()
        })
        .fold(0.0, f64::max)
}

/// Sup-norm residual of the `a` recursion over `[1:upto]`.
pub fn a_residual(sched: &RateSchedule, a: &[f64], upto: usize) -> f64 {
    let k = sched.kappa();
    (1..=upto)
        .map(|i| {
            let next = a.get(i + 1).copied().unwrap_or(0.0);
            let lam = sched.lambda(i);
            let mu_next = sched.mu(i + 1);
            ((mu_next + lam + k) * a[i] - lam * a[i - 1] - mu_next * next).abs()
        })
        .fold(0.0, f64::max)
}

/// Doubling refinement of a truncated solve.
fn refine(
    sched: &RateSchedule,
    tol: f64,
    start: usize,
    solve: impl Fn(usize) -> Result<Vec<f64>>,
) -> Result<(Vec<f64>, Vec<Refinement>)> {
    let hint = sched.top();
    let coverage = sched.coverage();
    let mut level = start.max(2);
    if let Some(c) = coverage {
        level = level.min(c);
    }
    if level <= hint {
        return Err(Error::Truncation(format!(
            "rates are tabulated up to {level}, which does not exceed the requested range {hint}"
        )));
    }
    let mut history = Vec::new();
    let mut prev: Option<Vec<f64>> = None;
    loop {
        let cur = solve(level)?;
        let change = prev.as_ref().map(|p| {
            (0..=hint)
                .map(|i| (cur[i] - p[i]).abs())
                .fold(0.0, f64::max)
        });
        history.push(Refinement {
            level,
            sup_change: change,
        });
        if let Some(ch) = change {
            if ch < tol {
                return Ok((cur, history));
            }
        }
        let mut next = level.saturating_mul(2);
        if let Some(c) = coverage {
            next = next.min(c);
        }
        if next > MAX_TRUNCATION || next == level {
            return Err(Error::NoConvergence {
                level,
                change: change.unwrap_or(f64::INFINITY),
            });
        }
        prev = Some(cur);
        level = next;
    }
}

fn initial_level(sched: &RateSchedule) -> usize {
    64usize.max(2 * sched.top())
}

/// Absorption probabilities `b_i = P_i(X hits 0 before Δ)` over `[0:N]`
/// (or `[0:M]` for a truncated infinite schedule).
pub fn solve_absorption_b(sched: &RateSchedule, tol: f64) -> Result<SolutionVector> {
    solve_absorption_b_from(sched, tol, initial_level(sched))
}

pub(crate) fn solve_absorption_b_from(
    sched: &RateSchedule,
    tol: f64,
    start: usize,
) -> Result<SolutionVector> {
    let top = sched.top();
    let mut out = if sched.extent().is_finite() {
        let b = b_at_level(sched, top, false)?;
        let residual = b_residual(sched, &b, top);
        let mut v = SolutionVector::new("b", 0, b);
        v.meta.residual = residual;
        v
    } else {
        let (full, history) = refine(sched, tol, start, |level| {
            sched.ensure_coverage(level)?;
            b_at_level(sched, level, true)
        })?;
        let residual = b_residual(sched, &full, top);
        let mut v = SolutionVector::new("b", 0, full[..=top].to_vec());
        v.meta = SolveMeta {
            truncation: Some(full.len() - 1),
            residual,
            history,
        };
        v
    };
    for x in &mut out.values {
        *x = x.clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Stationary tails `a_i = P(Z_∞ > i)` over `[0:N]` (or `[0:M]`).
pub fn solve_tail_a(sched: &RateSchedule, tol: f64) -> Result<SolutionVector> {
    solve_tail_a_from(sched, tol, initial_level(sched))
}

pub(crate) fn solve_tail_a_from(
    sched: &RateSchedule,
    tol: f64,
    start: usize,
) -> Result<SolutionVector> {
    let top = sched.top();
    let mut out = if sched.extent().is_finite() {
        let a = a_at_level(sched, top)?;
        let residual = a_residual(sched, &a, top.saturating_sub(1));
        let mut v = SolutionVector::new("a", 0, a);
        v.meta.residual = residual;
        v
    } else {
        let (full, history) = refine(sched, tol, start, |level| {
            sched.ensure_coverage(level)?;
            a_at_level(sched, level)
        })?;
        let residual = a_residual(sched, &full, top);
        let mut v = SolutionVector::new("a", 0, full[..=top].to_vec());
        v.meta = SolveMeta {
            truncation: Some(full.len() - 1),
            residual,
            history,
        };
        v
    };
    for x in &mut out.values {
        *x = x.clamp(0.0, 1.0);
    }
    Ok(out)
}

fn check_irreducible(gen: &Generator) -> Result<()> {
    let n = gen.len();
    if n == 1 {
        return Ok(());
    }
    if let Some(i) = (0..n).find(|&i| gen.is_absorbing(i)) {
        return Err(Error::NotIrreducible(gen.state(i), "is absorbing"));
    }
    if let Some(i) = gen.reachable_from(&[0]).iter().position(|&r| !r) {
        return Err(Error::NotIrreducible(
            gen.state(i),
            "is not reachable from the lowest state",
        ));
    }
    if let Some(i) = gen.can_reach(&[0]).iter().position(|&r| !r) {
        return Err(Error::NotIrreducible(
            gen.state(i),
            "cannot reach the lowest state",
        ));
    }
    Ok(())
}

/// Stationary distribution of an irreducible generator by dense LU with the
/// last balance equation replaced by the normalisation.
pub fn stationary_distribution(gen: &Generator, tol: f64) -> Result<SolutionVector> {
    check_irreducible(gen)?;
    let n = gen.len();
    let q = gen.to_dense();
    let mut m = q.transpose();
    for j in 0..n {
        m[(n - 1, j)] = 1.0;
    }
    let mut rhs = DVector::zeros(n);
    rhs[n - 1] = 1.0;
    let w = m
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("stationary balance equations".into()))?;
    let mut values: Vec<f64> = w.iter().map(|&x| x.max(0.0)).collect();
    let total: f64 = values.iter().sum();
    for x in &mut values {
        *x /= total;
    }
    let wv = DVector::from_vec(values.clone());
    let residual = (q.transpose() * wv).amax();
    let mut out = SolutionVector::new("w", gen.lo(), values);
    out.meta.residual = residual;
    if residual > tol * q.amax().max(1.0) {
        return Err(Error::SingularSystem(format!(
            "stationary residual {residual:.3e} exceeds tolerance {tol:.3e}"
        )));
    }
    Ok(out)
}

/// `P(hit target before taboo | start)`. A cemetery state counts as taboo
/// unless it is part of the target.
pub fn first_passage_prob(
    gen: &Generator,
    start: State,
    target: &[State],
    taboo: &[State],
) -> Result<f64> {
    let n = gen.len();
    let lookup = |s: &State| {
        gen.index(*s).ok_or_else(|| {
            Error::invalid(
                "state",
                None,
                format!("{s} is not a state of the generator"),
            )
        })
    };
    let start = lookup(&start)?;
    let target: Vec<usize> = target.iter().map(lookup).collect::<Result<_>>()?;
    let mut taboo: Vec<usize> = taboo.iter().map(lookup).collect::<Result<_>>()?;
    if gen.has_cemetery() {
        let d = n - 1;
        if !target.contains(&d) && !taboo.contains(&d) {
            taboo.push(d);
        }
    }
    if target.iter().any(|t| taboo.contains(t)) {
        return Err(Error::invalid(
            "taboo",
            None,
            "target and taboo sets overlap",
        ));
    }
    if target.contains(&start) || taboo.contains(&start) {
        return Err(Error::invalid(
            "start",
            None,
            "start lies in the target or taboo set",
        ));
    }
    let boundary: Vec<usize> = target.iter().chain(taboo.iter()).copied().collect();
    if !gen.can_reach(&boundary)[start] {
        return Err(Error::SingularSystem(format!(
            "neither the target nor the taboo set is reachable from {}",
            gen.state(start)
        )));
    }
    let mut fixed = vec![false; n];
    for &b in &boundary {
        fixed[b] = true;
    }
    let reach_target = gen.can_reach(&target);
    if !reach_target[start] {
        return Ok(0.0);
    }
    // Unknowns: non-boundary states that can still reach the target.
    let unknown: Vec<usize> = (0..n).filter(|&i| !fixed[i] && reach_target[i]).collect();
    let mut pos = vec![usize::MAX; n];
    for (k, &i) in unknown.iter().enumerate() {
        pos[i] = k;
    }
    let u = unknown.len();
    let mut a = DMatrix::zeros(u, u);
    let mut rhs = DVector::zeros(u);
    for (k, &i) in unknown.iter().enumerate() {
        a[(k, k)] = gen.exit_rate(i);
        gen.for_each_transition(i, |j, r| {
            if target.contains(&j) {
                rhs[k] += r;
            } else if pos[j] != usize::MAX {
                a[(k, pos[j])] -= r;
            }
        });
    }
    let h = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::SingularSystem("first-passage system".into()))?;
    Ok(h[pos[start]].clamp(0.0, 1.0))
}

/// Poisson(`m`) weights on `[left : left+len-1]`, normalised, with tails
/// below `1e-12` of the total mass cut off.
fn poisson_weights(m: f64) -> (usize, Vec<f64>) {
    if m == 0.0 {
        return (0, vec![1.0]);
    }
    let mode = m.floor() as usize;
    let cut = 1e-12 * 1e-4;
    let mut right = vec![1.0];
    let mut w = 1.0;
    let mut k = mode;
    while w > cut {
        k += 1;
        w *= m / k as f64;
        right.push(w);
    }
    let mut left = Vec::new();
    let mut w = 1.0;
    let mut k = mode;
    while k > 0 && w > cut {
        w *= k as f64 / m;
        k -= 1;
        left.push(w);
    }
    let start = mode - left.len();
    left.reverse();
    left.extend(right);
    let total: f64 = left.iter().sum();
    for x in &mut left {
        *x /= total;
    }
    (start, left)
}

/// One step of the uniformised kernel `P = I + Q/Λ` applied on the right: `v ↦ vP`.
fn kernel_step(gen: &Generator, rate: f64, v: &[f64], out: &mut [f64]) {
    for (j, o) in out.iter_mut().enumerate() {
        *o = v[j] * (1.0 - gen.exit_rate(j) / rate);
    }
    for (i, &vi) in v.iter().enumerate() {
        if vi != 0.0 {
            gen.for_each_transition(i, |j, r| out[j] += vi * r / rate);
        }
    }
}

/// `init · e^{Qt}` by uniformisation.
pub fn transient_distribution(gen: &Generator, t: f64, init: &[f64]) -> Vec<f64> {
    assert_eq!(
        init.len(),
        gen.len(),
        "initial distribution has the wrong length"
    );
    assert!(t >= 0.0 && t.is_finite(), "time must be finite and ≥ 0");
    let rate = gen.max_exit_rate();
    if t == 0.0 || rate == 0.0 {
        return init.to_vec();
    }
    let (left, weights) = poisson_weights(rate * t);
    let mut v = init.to_vec();
    let mut next = vec![0.0; v.len()];
    let mut acc = vec![0.0; v.len()];
    for k in 0..left + weights.len() {
        if k >= left {
            let w = weights[k - left];
            for (a, x) in acc.iter_mut().zip(&v) {
                *a += w * x;
            }
        }
        kernel_step(gen, rate, &v, &mut next);
        std::mem::swap(&mut v, &mut next);
    }
    acc
}

/// The full matrix `e^{Qt}` (rows = initial state), by uniformisation on a
/// step `h` with `Λh ≤ 1` followed by repeated squaring.
pub fn transition_matrix(gen: &Generator, t: f64) -> DMatrix<f64> {
    assert!(t >= 0.0 && t.is_finite(), "time must be finite and ≥ 0");
    let n = gen.len();
    let rate = gen.max_exit_rate();
    if t == 0.0 || rate == 0.0 {
        return DMatrix::identity(n, n);
    }
    let mut squarings = 0;
    let mut h = t;
    while rate * h > 1.0 {
        h /= 2.0;
        squarings += 1;
    }
    let mut p = gen.to_dense() / rate;
    for i in 0..n {
        p[(i, i)] += 1.0;
    }
    let (left, weights) = poisson_weights(rate * h);
    let mut power = DMatrix::identity(n, n);
    let mut e = DMatrix::zeros(n, n);
    for k in 0..left + weights.len() {
        if k >= left {
            e += &power * weights[k - left];
        }
        power = &power * &p;
    }
    for _ in 0..squarings {
        e = &e * &e;
    }
    e
}
