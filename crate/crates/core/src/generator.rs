//! Sparse generator matrices over a contiguous integer range with an optional
//! cemetery state `Δ`, and the constructors for every process family.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::schedule::RateSchedule;

/// A state label. `Cemetery` orders above every site, matching the convention
/// that `Δ` is identified with `+∞`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub enum State {
    Site(i64),
    Cemetery,
}

impl std::fmt::Display for State {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            State::Site(i) => write!(f, "{i}"),
            State::Cemetery => f.write_str("Δ"),
        }
    }
}

/// The process families of the library.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum ProcessKind {
    /// Killed birth-death process on `[0:N] ∪ {Δ}`.
    X,
    /// Catastrophe process on `[1:N]`.
    Z,
    /// Siegmund dual of `X`, restricted to `[1:N+1]`.
    XStar,
    /// Siegmund dual of `Z` on `[1:N] ∪ {Δ}`.
    ZStar,
    /// Level-`n` piece of `X` on `[n-1:N] ∪ {Δ}`.
    Xn(usize),
    /// Level-`n` piece of `Z` on `[n:N]`.
    Zn(usize),
    /// Marked version of `Zn`; see [`build_marked_generator`].
    ZnMarked(usize),
    /// `Zn` with the catastrophe arrows redirected to `Δ`.
    ZnCut(usize),
}

/// Sparse generator. Diagonal entries are implied by the row sums.
///
/// Catastrophe rows of the form "rate `κ` to every site at least two below"
/// may be stored as a lazy band instead of explicit entries.
#[derive(Clone, Debug)]
pub struct Generator {
    lo: i64,
    hi: i64,
    cemetery: bool,
    rows: Vec<Vec<(usize, f64)>>,
    cumulative: Vec<Vec<f64>>,
    band: Option<f64>,
    exit: Vec<f64>,
}

impl Generator {
    /// Generator on `[lo:hi]` (plus `Δ` if `cemetery`) from a list of
    /// off-diagonal rates. Duplicates are summed and zero rates dropped.
    pub fn from_rates(
        lo: i64,
        hi: i64,
        cemetery: bool,
        rates: impl IntoIterator<Item = (State, State, f64)>,
    ) -> Result<Self> {
        if hi < lo {
            return Err(Error::invalid(
                "states",
                None,
                format!("empty range [{lo}:{hi}]"),
            ));
        }
        let n = (hi - lo + 1) as usize + cemetery as usize;
        let mut dense: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        let index = |s: State| -> Result<usize> {
            match s {
                State::Site(i) if (lo..=hi).contains(&i) => Ok((i - lo) as usize),
                State::Cemetery if cemetery => Ok(n - 1),
                _ => Err(Error::invalid(
                    "states",
                    None,
                    format!("state {s} outside the generator range"),
                )),
            }
        };
        for (from, to, rate) in rates {
            if !(rate.is_finite() && rate >= 0.0) {
                return Err(Error::invalid(
                    "rate",
                    None,
                    format!("q({from},{to}) = {rate} must be finite and ≥ 0"),
                ));
            }
            if rate == 0.0 {
                continue;
            }
            let (i, j) = (index(from)?, index(to)?);
            if i == j {
                continue;
            }
            if cemetery && i == n - 1 {
                return Err(Error::invalid(
                    "rate",
                    Some(i),
                    "Δ must not have outgoing rates",
                ));
            }
            dense[i].push((j, rate));
        }
        for row in &mut dense {
            row.sort_by_key(|&(j, _)| j);
            row.dedup_by(|next, prev| {
                if next.0 == prev.0 {
                    prev.1 += next.1;
                    true
                } else {
                    false
                }
            });
        }
        Ok(Self::assemble(lo, hi, cemetery, dense, None))
    }

    fn assemble(
        lo: i64,
        hi: i64,
        cemetery: bool,
        rows: Vec<Vec<(usize, f64)>>,
        band: Option<f64>,
    ) -> Self {
        let mut cumulative = Vec::with_capacity(rows.len());
        let mut exit = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            let mut acc = 0.0;
            let cum: Vec<f64> = row
                .iter()
                .map(|&(_, r)| {
                    acc += r;
                    acc
                })
                .collect();
            let band_total = match band {
                Some(k) if i < (hi - lo + 1) as usize => k * i.saturating_sub(1) as f64,
                _ => 0.0,
            };
            exit.push(acc + band_total);
            cumulative.push(cum);
        }
        Generator {
            lo,
            hi,
            cemetery,
            rows,
            cumulative,
            band,
            exit,
        }
    }

    /// Number of states including `Δ`.
    pub fn len(&self) -> usize {
        self.exit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exit.is_empty()
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.hi
    }

    pub fn has_cemetery(&self) -> bool {
        self.cemetery
    }

    pub fn state(&self, idx: usize) -> State {
        let sites = (self.hi - self.lo + 1) as usize;
        if idx < sites {
            State::Site(self.lo + idx as i64)
        } else {
            assert!(
                self.cemetery && idx == sites,
                "state index {idx} out of range"
            );
            State::Cemetery
        }
    }

    pub fn index(&self, s: State) -> Option<usize> {
        match s {
            State::Site(i) if (self.lo..=self.hi).contains(&i) => Some((i - self.lo) as usize),
            State::Cemetery if self.cemetery => Some(self.len() - 1),
            _ => None,
        }
    }

    /// Position of a state in the order used by the Siegmund kernel, with
    /// `Δ` sitting directly above `hi`.
    pub fn order_value(&self, s: State) -> i64 {
        match s {
            State::Site(i) => i,
            State::Cemetery => self.hi + 1,
        }
    }

    pub fn states(&self) -> impl Iterator<Item = State> + '_ {
        (0..self.len()).map(|i| self.state(i))
    }

    /// Total out-rate of a state.
    pub fn exit_rate(&self, idx: usize) -> f64 {
        self.exit[idx]
    }

    pub fn max_exit_rate(&self) -> f64 {
        self.exit.iter().copied().fold(0.0, f64::max)
    }

    pub fn is_absorbing(&self, idx: usize) -> bool {
        self.exit[idx] == 0.0
    }

    pub fn absorbing_states(&self) -> Vec<State> {
        (0..self.len())
            .filter(|&i| self.is_absorbing(i))
            .map(|i| self.state(i))
            .collect()
    }

    /// Whether catastrophe rows are generated lazily.
    pub fn is_lazy(&self) -> bool {
        self.band.is_some()
    }

    /// Calls `f(target, rate)` for every nonzero off-diagonal entry of a row.
    pub fn for_each_transition(&self, idx: usize, mut f: impl FnMut(usize, f64)) {
        for &(j, r) in &self.rows[idx] {
            f(j, r);
        }
        if let Some(k) = self.band {
            if idx < (self.hi - self.lo + 1) as usize {
                for j in 0..idx.saturating_sub(1) {
                    f(j, k);
                }
            }
        }
    }

    /// Off-diagonal entries of a row, sorted by target and merged.
    pub fn transitions(&self, idx: usize) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        self.for_each_transition(idx, |j, r| out.push((j, r)));
        out.sort_by_key(|&(j, _)| j);
        out.dedup_by(|next, prev| {
            if next.0 == prev.0 {
                prev.1 += next.1;
                true
            } else {
                false
            }
        });
        out
    }

    /// Off-diagonal rate `q(from, to)`; zero for `from == to` or unknown states.
    pub fn rate(&self, from: State, to: State) -> f64 {
        match (self.index(from), self.index(to)) {
            (Some(i), Some(j)) if i != j => self.rate_idx(i, j),
            _ => 0.0,
        }
    }

    pub fn rate_idx(&self, i: usize, j: usize) -> f64 {
        if i == j {
            return 0.0;
        }
        let explicit: f64 = self.rows[i]
            .iter()
            .filter(|&&(t, _)| t == j)
            .map(|&(_, r)| r)
            .sum();
        let band = match self.band {
            Some(k) if i < (self.hi - self.lo + 1) as usize && j + 2 <= i => k,
            _ => 0.0,
        };
        explicit + band
    }

    /// Samples a jump target given `u` uniform on `[0, exit_rate(idx))`.
    pub fn sample_target(&self, idx: usize, u: f64) -> usize {
        let cum = &self.cumulative[idx];
        let total = cum.last().copied().unwrap_or(0.0);
        if u < total || self.band.is_none() {
            let k = cum.partition_point(|&c| c <= u).min(cum.len() - 1);
            return self.rows[idx][k].0;
        }
        let k = self.band.expect("band");
        let slots = idx.saturating_sub(1);
        (((u - total) / k) as usize).min(slots - 1)
    }

    /// Copy with all lazy rows made explicit.
    pub fn materialize(&self) -> Generator {
        if self.band.is_none() {
            return self.clone();
        }
        let rows = (0..self.len()).map(|i| self.transitions(i)).collect();
        Self::assemble(self.lo, self.hi, self.cemetery, rows, None)
    }

    /// Dense matrix with the diagonal filled in.
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut q = DMatrix::zeros(n, n);
        for i in 0..n {
            self.for_each_transition(i, |j, r| q[(i, j)] += r);
            q[(i, i)] = -self.exit[i];
        }
        q
    }

    /// Indices reachable from `start` (including `start`).
    pub fn reachable_from(&self, start: &[usize]) -> Vec<bool> {
        let mut seen = vec![false; self.len()];
        let mut stack: Vec<usize> = start.to_vec();
        for &s in start {
            seen[s] = true;
        }
        while let Some(i) = stack.pop() {
            self.for_each_transition(i, |j, _| {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            });
        }
        seen
    }

    /// Indices from which some state of `targets` is reachable.
    pub fn can_reach(&self, targets: &[usize]) -> Vec<bool> {
        let n = self.len();
        let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            self.for_each_transition(i, |j, _| incoming[j].push(i));
        }
        let mut seen = vec![false; n];
        let mut stack: Vec<usize> = targets.to_vec();
        for &t in targets {
            seen[t] = true;
        }
        while let Some(j) = stack.pop() {
            for &i in &incoming[j] {
                if !seen[i] {
                    seen[i] = true;
                    stack.push(i);
                }
            }
        }
        seen
    }
}

/// States of the marked process: a level of `Zn` and the flag
/// (`marked = true` for `*`, `false` for `∘`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MarkedState {
    pub level: usize,
    pub marked: bool,
}

/// The marked process over levels `[n:N]`, encoded on a contiguous range:
/// `(i,*) ↦ i-n` and `(i,∘) ↦ (N-n+1) + (i-n)`.
#[derive(Clone, Debug)]
pub struct MarkedGenerator {
    generator: Generator,
    n: usize,
    top: usize,
}

impl MarkedGenerator {
    pub fn generator(&self) -> &Generator {
        &self.generator
    }

    pub fn level(&self) -> usize {
        self.n
    }

    pub fn top(&self) -> usize {
        self.top
    }

    pub fn encode(&self, s: MarkedState) -> usize {
        let width = self.top - self.n + 1;
        (s.level - self.n) + if s.marked { 0 } else { width }
    }

    pub fn decode(&self, idx: usize) -> MarkedState {
        let width = self.top - self.n + 1;
        MarkedState {
            level: self.n + idx % width,
            marked: idx < width,
        }
    }

    pub fn rate(&self, from: MarkedState, to: MarkedState) -> f64 {
        self.generator.rate_idx(self.encode(from), self.encode(to))
    }
}

/// Rates of `sched` cut off at the generator's top state.
struct Cut<'a> {
    s: &'a RateSchedule,
    top: usize,
}

impl Cut<'_> {
    fn lambda(&self, i: usize) -> f64 {
        if i >= self.top {
            0.0
        } else {
            self.s.lambda(i)
        }
    }

    fn mu(&self, i: usize) -> f64 {
        if i > self.top {
            0.0
        } else {
            self.s.mu(i)
        }
    }
}

fn check_level(n: usize, lo: usize, hi: usize) -> Result<()> {
    if n < lo || n > hi {
        Err(Error::Range { n, lo, hi })
    } else {
        Ok(())
    }
}

/// Builds the generator of a process family.
///
/// For infinite extents the generator lives on states up to the truncation
/// hint and the catastrophe rows are kept lazy.
pub fn build_generator(kind: ProcessKind, sched: &RateSchedule) -> Result<Generator> {
    let top = sched.top();
    sched.ensure_coverage(top)?;
    let c = Cut { s: sched, top };
    let k = sched.kappa();
    let lazy = !sched.extent().is_finite();
    let site = |i: usize| State::Site(i as i64);
    let mut rates: Vec<(State, State, f64)> = Vec::new();
    let mut push = |from: usize, to: State, r: f64| rates.push((site(from), to, r));

    let (lo, hi, cemetery, band) = match kind {
        ProcessKind::X => {
            for i in 1..=top {
                let x = i as f64;
                push(i, site(i + 1), x * c.lambda(i));
                push(i, site(i - 1), x * c.mu(i));
                push(i, State::Cemetery, x * k);
            }
            (0, top, true, None)
        }
        ProcessKind::Z => {
            for i in 1..=top {
                push(i, site(i + 1), i as f64 * c.lambda(i));
                if i >= 2 {
                    push(i, site(i - 1), (i - 1) as f64 * c.mu(i) + k);
                    if !lazy {
                        for j in 1..=i.saturating_sub(2) {
                            push(i, site(j), k);
                        }
                    }
                }
            }
            (1, top, false, lazy.then_some(k))
        }
        ProcessKind::XStar => {
            for i in 1..=top + 1 {
                if i <= top {
                    push(i, site(i + 1), i as f64 * c.mu(i));
                }
                if i >= 2 {
                    push(i, site(i - 1), (i - 1) as f64 * c.lambda(i - 1) + k);
                    if !lazy {
                        for j in 1..=i.saturating_sub(2) {
                            push(i, site(j), k);
                        }
                    }
                }
            }
            (1, top + 1, false, lazy.then_some(k))
        }
        ProcessKind::ZStar => {
            for i in 2..=top {
                let x = (i - 1) as f64;
                if i < top {
                    push(i, site(i + 1), x * c.mu(i));
                }
                push(i, site(i - 1), x * c.lambda(i - 1));
                let edge = if i == top { c.mu(i) } else { 0.0 };
                push(i, State::Cemetery, x * (k + edge));
            }
            (1, top, true, None)
        }
        ProcessKind::Xn(n) => {
            check_level(n, 1, top)?;
            for i in n..=top {
                push(i, site(i + 1), c.lambda(i));
                push(i, site(i - 1), c.mu(i));
                push(i, State::Cemetery, k);
            }
            (n - 1, top, true, None)
        }
        ProcessKind::Zn(n) | ProcessKind::ZnCut(n) => {
            check_level(n, 1, top.saturating_sub(1))?;
            let cut = matches!(kind, ProcessKind::ZnCut(_));
            for i in n..=top {
                push(i, site(i + 1), c.lambda(i));
                if i >= n + 2 {
                    push(i, site(i - 1), c.mu(i));
                }
                if i == n + 1 {
                    push(i, site(n), c.mu(i));
                }
                if i > n {
                    push(i, if cut { State::Cemetery } else { site(n) }, k);
                }
            }
            (n, top, cut, None)
        }
        ProcessKind::ZnMarked(n) => return build_marked_generator(sched, n).map(|m| m.generator),
    };
    let g = Generator::from_rates(lo as i64, hi as i64, cemetery, rates)?;
    Ok(match band {
        Some(k) => Generator::assemble(g.lo, g.hi, g.cemetery, g.rows, Some(k)),
        None => g,
    })
}

/// Builds the marked process of level `n`: the `*` layer runs `Zn` until the
/// first catastrophe, which sends it to `(n,∘)`; the `∘` layer runs `Zn`.
pub fn build_marked_generator(sched: &RateSchedule, n: usize) -> Result<MarkedGenerator> {
    let top = sched.top();
    sched.ensure_coverage(top)?;
    check_level(n, 1, top.saturating_sub(1))?;
    let c = Cut { s: sched, top };
    let k = sched.kappa();
    let width = top - n + 1;
    let star = |i: usize| State::Site((i - n) as i64);
    let open = |i: usize| State::Site((width + i - n) as i64);
    let mut rates = Vec::new();
    for i in n..=top {
        if i < top {
            rates.push((star(i), star(i + 1), c.lambda(i)));
            rates.push((open(i), open(i + 1), c.lambda(i)));
        }
        if i >= n + 2 {
            rates.push((star(i), star(i - 1), c.mu(i)));
            rates.push((open(i), open(i - 1), c.mu(i)));
        }
        if i == n + 1 {
            rates.push((star(i), star(n), c.mu(i)));
            rates.push((open(i), open(n), c.mu(i) + k));
        }
        if i >= n + 2 {
            rates.push((open(i), open(n), k));
        }
        if i > n {
            rates.push((star(i), open(n), k));
        }
    }
    let generator = Generator::from_rates(0, (2 * width - 1) as i64, false, rates)?;
    Ok(MarkedGenerator { generator, n, top })
}
