use serde::Serialize;

use super::{falling_ratio, normalize_logs, IdentityCheck, MoranParams, SumIndexing};
use crate::error::{Error, Result};
use crate::generator::{Generator, State};
use crate::schedule::{Affine, Extent, RateSchedule};
use crate::solvers::{
    solve_absorption_b, solve_tail_a, stationary_distribution, SolutionVector, DEFAULT_TOL,
};

/// Tolerance for the finite-population identity checks.
pub const FINITE_TOL: f64 = 1e-9;

impl MoranParams {
    fn up(&self, i: usize) -> f64 {
        let (n, i) = (self.n as f64, i as f64);
        i * (n - i) / n + self.u * self.nu1 * (n - i)
    }

    fn down(&self, i: usize) -> f64 {
        let (n, i) = (self.n as f64, i as f64);
        (1.0 + self.s) * i * (n - i) / n + self.u * self.nu0 * i
    }

    fn selection_rate(&self) -> Affine {
        Affine {
            intercept: self.s,
            slope: -self.s / self.n as f64,
        }
    }

    /// k-ASG: `λ_i = s(N-i)/N`, `μ_i = (i-1)/N + u ν1`, `κ = u ν0`.
    pub fn kasg_schedule(&self) -> Result<RateSchedule> {
        let n = self.n as f64;
        let mu = Affine {
            intercept: -1.0 / n + self.u * self.nu1,
            slope: 1.0 / n,
        };
        RateSchedule::affine_allow_zero_birth(
            Extent::Finite(self.n),
            self.selection_rate(),
            mu,
            self.u * self.nu0,
        )
    }

    /// pLD-ASG: as the k-ASG but with `μ_i = i/N + u ν1`.
    pub fn pldasg_schedule(&self) -> Result<RateSchedule> {
        let mu = Affine {
            intercept: self.u * self.nu1,
            slope: 1.0 / self.n as f64,
        };
        RateSchedule::affine_allow_zero_birth(
            Extent::Finite(self.n),
            self.selection_rate(),
            mu,
            self.u * self.nu0,
        )
    }
}

/// The forward Moran chain and its stationary law.
#[derive(Clone, Debug)]
pub struct MoranForward {
    pub generator: Generator,
    /// Stationary distribution over `[0:N]` from the detailed-balance product.
    pub pi: SolutionVector,
    /// Sup-distance to the LU stationary solve.
    pub lu_discrepancy: f64,
}

/// Builds the number-of-type-1 chain on `[0:N]` and its reversible
/// stationary distribution.
pub fn moran_forward(p: &MoranParams) -> Result<MoranForward> {
    let n = p.n;
    let rates = (0..n).flat_map(|i| {
        [
            (State::Site(i as i64), State::Site(i as i64 + 1), p.up(i)),
            (
                State::Site(i as i64 + 1),
                State::Site(i as i64),
                p.down(i + 1),
            ),
        ]
    });
    let generator = Generator::from_rates(0, n as i64, false, rates)?;
    let mut logs = vec![0.0; n + 1];
    for i in 1..=n {
        logs[i] = logs[i - 1] + (p.up(i - 1) / p.down(i)).ln();
    }
    let pi = SolutionVector::new("pi", 0, normalize_logs(&logs));
    let lu = stationary_distribution(&generator, DEFAULT_TOL)?;
    let lu_discrepancy = pi
        .values
        .iter()
        .zip(&lu.values)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if lu_discrepancy > 1e-10 {
        return Err(Error::HypothesisViolated(format!(
            "product-form stationary law differs from the linear solve by {lu_discrepancy:.3e}"
        )));
    }
    Ok(MoranForward {
        generator,
        pi,
        lu_discrepancy,
    })
}

/// `Σ_k π_k k^{(i)}/N^{(i)}`: the probability that `i` draws without
/// replacement are all of type 1.
pub fn sampling_moments(pi: &SolutionVector, i: usize) -> Result<f64> {
    let n = pi.hi() as usize;
    if i > n {
        return Err(Error::Range { n: i, lo: 0, hi: n });
    }
    Ok(pi
        .iter()
        .map(|(k, w)| w * falling_ratio(k as usize, n, i))
        .sum())
}

/// `g_N(i)`, the probability that the eventual common ancestor is unfit given
/// `i` unfit individuals, from the pLD-ASG tails `a` over `[0:N]`.
pub fn ancestral_type_prob_finite(
    a: &SolutionVector,
    i: usize,
    indexing: SumIndexing,
) -> Result<f64> {
    let n = a.hi() as usize;
    if i > n {
        return Err(Error::Range { n: i, lo: 0, hi: n });
    }
    let sum: f64 = (1..=n)
        .map(|j| {
            let r = falling_ratio(i, n, j - 1);
            match indexing {
                SumIndexing::Shifted => a.at(j as i64 - 1) * r / (n - j + 1) as f64,
                SumIndexing::Unshifted => a.at(j as i64) * r * (i as f64 - j as f64 + 1.0),
            }
        })
        .sum();
    Ok(1.0 - (n - i) as f64 * sum)
}

/// pLD-ASG tails over `[0:N]`.
pub(crate) fn tails(p: &MoranParams) -> Result<SolutionVector> {
    solve_tail_a(&p.pldasg_schedule()?, DEFAULT_TOL)
}

/// Exact solves and identity checks for one Moran population.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FiniteReport {
    pub params: MoranParams,
    /// k-ASG absorption probabilities over `[0:N]`.
    pub b: SolutionVector,
    /// pLD-ASG tails over `[0:N]`.
    pub a: SolutionVector,
    pub checks: Vec<IdentityCheck>,
    pub pass: bool,
}

/// Checks the k-ASG/pLD-ASG identities across population sizes `N-1`, `N`, `N+1`.
pub fn finite_relations(p: &MoranParams) -> Result<FiniteReport> {
    let n = p.n;
    let nf = n as f64;
    let m1 = nf * p.u * p.nu1;
    let b = solve_absorption_b(&p.kasg_schedule()?, DEFAULT_TOL)?;
    let a = solve_tail_a(&p.pldasg_schedule()?, DEFAULT_TOL)?;
    let mut checks = Vec::new();

    if n >= 2 {
        let left = p.resized(n - 1, p.u_left())?;
        let al = solve_tail_a(&left.pldasg_schedule()?, DEFAULT_TOL)?;
        let mut first =
            IdentityCheck::new("sampling ratios from smaller-population tails", FINITE_TOL);
        let denom = 1.0 - al.at(1);
        let mut prod = 1.0;
        for i in 2..=n {
            if i >= 3 {
                if p.s == 0.0 {
                    break;
                }
                let j = (i - 2) as f64;
                prod *= (j + 1.0 + m1) / ((nf - j - 1.0) * p.s);
            }
            let rhs = (al.at(i as i64 - 2) - al.at(i as i64 - 1)) / denom * prod;
            first.compare(b.at(i as i64) / b.at(2), rhs);
        }
        if p.s == 0.0 && n >= 3 {
            first = first.with_note("s = 0: indices i ≥ 3 are 0/0 and skipped");
        }
        checks.push(first);

        // The Z-process with k-ASG rates against the smaller pLD-ASG.
        let hat = solve_tail_a(&p.kasg_schedule()?, DEFAULT_TOL)?;
        let w_hat = |j: usize| hat.at(j as i64 - 1) - hat.at(j as i64);
        let w_left = |j: usize| al.at(j as i64 - 1) - al.at(j as i64);
        let mut wr = IdentityCheck::new(
            "stationary ratios of the matched catastrophe chain",
            FINITE_TOL,
        );
        let mut ar = IdentityCheck::new("tail ratios of the matched catastrophe chain", FINITE_TOL);
        if p.s > 0.0 {
            for j in 2..=n {
                wr.compare(w_hat(j) / w_hat(2), w_left(j - 1) / w_left(1));
            }
            for j in 1..=n {
                ar.compare(hat.at(j as i64) / hat.at(1), al.at(j as i64 - 1) / al.at(0));
            }
        } else {
            let note = "s = 0: the chain never leaves 1 and the ratios are 0/0";
            wr = wr.with_note(note);
            ar = ar.with_note(note);
        }
        checks.push(wr);
        checks.push(ar);

        if n > 2 {
            let mut c = IdentityCheck::new("b1/b2 from smaller-population tails", FINITE_TOL);
            let rhs = (1.0 + p.s * (nf - 2.0) + nf * p.u) / (1.0 + m1)
                - (al.at(1) - al.at(2)) / (1.0 - al.at(1)) * (2.0 + m1) / (1.0 + m1);
            c.compare(b.at(1) / b.at(2), rhs);
            checks.push(c);
        }
    }

    let right = p.resized(n + 1, p.u_right())?;
    let br = solve_absorption_b(&right.kasg_schedule()?, DEFAULT_TOL)?;
    let products: Vec<f64> = (0..n)
        .scan(1.0, |acc, i| {
            if i > 0 {
                *acc *= (nf - i as f64) * p.s / (i as f64 + m1);
            }
            Some(*acc)
        })
        .collect();
    let mut second = IdentityCheck::new(
        "tails from larger-population sampling differences",
        FINITE_TOL,
    );
    let denom = br.at(1) - br.at(2);
    for (i, prod) in products.iter().enumerate() {
        let i = i as i64;
        second.compare(a.at(i), (br.at(i + 1) - br.at(i + 2)) / denom * prod);
    }
    checks.push(second);

    // Integral representation through the stationary law of the larger population.
    let mut logs = vec![f64::NEG_INFINITY; n + 2];
    logs[1] = 0.0;
    for k in 2..=n + 1 {
        let j = (k - 1) as f64;
        let ratio =
            (nf + 1.0 - j) * (j + m1) / ((j + 1.0) * ((1.0 + p.s) * (nf - j) + nf * p.u * p.nu0));
        logs[k] = logs[k - 1] + ratio.ln();
    }
    let pit = normalize_logs(&logs);
    let den: f64 = (1..=n + 1)
        .map(|k| k as f64 / (nf + 1.0) * (1.0 - (k as f64 - 1.0) / nf) * pit[k])
        .sum();
    let mut integral = IdentityCheck::new("tail integral representation", FINITE_TOL);
    for (i, prod) in products.iter().enumerate() {
        let num: f64 = (1..=n + 1)
            .map(|k| {
                falling_ratio(k, n + 1, i + 1)
                    * (1.0 - (k as f64 - i as f64 - 1.0) / (nf - i as f64))
                    * pit[k]
            })
            .sum();
        integral.compare(a.at(i as i64), num / den * prod);
    }
    checks.push(integral);

    let pass = checks.iter().all(|c| c.pass);
    Ok(FiniteReport {
        params: p.clone(),
        b,
        a,
        checks,
        pass,
    })
}
