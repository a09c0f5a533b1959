use serde::Serialize;

use super::quadrature::gauss_jacobi;
use super::{rel_error, DiffusionParams, IdentityCheck, SumIndexing};
use crate::error::{Error, Result};
use crate::schedule::{Affine, Extent, RateSchedule};
use crate::solvers::{
    b_residual, solve_absorption_b, solve_tail_a_from, SolutionVector, DEFAULT_TOL,
};

/// Tolerance for the diffusion identity checks.
pub const DIFFUSION_TOL: f64 = 1e-8;

const MIN_NODES: usize = 32;
const MAX_NODES: usize = 1024;

impl DiffusionParams {
    /// Diffusion k-ASG on `[0:truncation]`: `λ = σ`, `μ_i = i - 1 + θν1`, `κ = θν0`.
    pub fn kasg_schedule(&self, truncation: usize) -> Result<RateSchedule> {
        let mu = Affine {
            intercept: self.theta * self.nu1 - 1.0,
            slope: 1.0,
        };
        RateSchedule::affine_allow_zero_birth(
            Extent::Infinite { truncation },
            Affine::constant(self.sigma),
            mu,
            self.theta * self.nu0,
        )
    }

    /// Diffusion pLD-ASG: as the k-ASG but with `μ_i = i + θν1`.
    pub fn pldasg_schedule(&self, truncation: usize) -> Result<RateSchedule> {
        let mu = Affine {
            intercept: self.theta * self.nu1,
            slope: 1.0,
        };
        RateSchedule::affine_allow_zero_birth(
            Extent::Infinite { truncation },
            Affine::constant(self.sigma),
            mu,
            self.theta * self.nu0,
        )
    }

    /// `Π_{j=1}^i σ/(j + θν1)`.
    fn tail_factor(&self, i: usize) -> f64 {
        (1..=i)
            .map(|j| self.sigma / (j as f64 + self.theta * self.nu1))
            .product()
    }
}

/// Integrates against the Wright stationary density
/// `π(y) ∝ e^{-σy} y^{θν1-1} (1-y)^{θν0-1}`, doubling the node count until the
/// values stabilise. `f(y, 1-y)` returns the integrand vector.
fn wright_quadrature(
    p: &DiffusionParams,
    tol: f64,
    f: impl Fn(f64, f64) -> Vec<f64>,
) -> Result<Vec<f64>> {
    let threshold = tol.min(1e-12);
    let mut prev: Option<Vec<f64>> = None;
    let mut change = f64::INFINITY;
    let mut n = MIN_NODES;
    while n <= MAX_NODES {
        let (x, w) = gauss_jacobi(n, p.theta * p.nu0 - 1.0, p.theta * p.nu1 - 1.0);
        let mut acc: Option<Vec<f64>> = None;
        let mut mass = 0.0;
        for (&xk, &wk) in x.iter().zip(&w) {
            let (y, omy) = ((1.0 + xk) / 2.0, (1.0 - xk) / 2.0);
            let weight = wk * (-p.sigma * y).exp();
            mass += weight;
            let v = f(y, omy);
            match acc.as_mut() {
                Some(a) => a.iter_mut().zip(&v).for_each(|(a, v)| *a += weight * v),
                None => acc = Some(v.into_iter().map(|v| weight * v).collect()),
            }
        }
        let values: Vec<f64> = acc
            .unwrap_or_default()
            .into_iter()
            .map(|v| v / mass)
            .collect();
        if let Some(pv) = &prev {
            change = pv
                .iter()
                .zip(&values)
                .map(|(a, b)| rel_error(*a, *b))
                .fold(0.0, f64::max);
            if change < threshold {
                return Ok(values);
            }
        }
        prev = Some(values);
        n *= 2;
    }
    Err(Error::QuadratureNoConvergence {
        nodes: MAX_NODES,
        change,
    })
}

fn powers(y: f64, upto: usize) -> impl Iterator<Item = f64> {
    (0..=upto).scan(1.0, move |acc, i| {
        if i > 0 {
            *acc *= y;
        }
        Some(*acc)
    })
}

/// `β_i = ∫ y^i π(y) dy` over `[0:imax]`.
pub fn wright_moments(p: &DiffusionParams, imax: usize, tol: f64) -> Result<SolutionVector> {
    let v = wright_quadrature(p, tol, |y, _| powers(y, imax).collect())?;
    Ok(SolutionVector::new("beta", 0, v))
}

/// `∫ y^{i+1}(1-y) π(y) dy` over `[0:imax]`.
pub fn wright_integrals(p: &DiffusionParams, imax: usize, tol: f64) -> Result<SolutionVector> {
    let v = wright_quadrature(p, tol, |y, omy| {
        powers(y, imax).map(|m| m * y * omy).collect()
    })?;
    Ok(SolutionVector::new("wright_integrals", 0, v))
}

/// Tails `α_i` of the diffusion pLD-ASG stationary law over `[0:imax]`.
pub fn fearnhead_tails(p: &DiffusionParams, imax: usize, tol: f64) -> Result<SolutionVector> {
    if p.sigma == 0.0 {
        let mut v = vec![0.0; imax + 1];
        v[0] = 1.0;
        return Ok(SolutionVector::new("alpha", 0, v));
    }
    let start = (64 + (10.0 * p.sigma).ceil() as usize).max(2 * imax);
    let mut a = solve_tail_a_from(&p.pldasg_schedule(imax)?, tol, start)?;
    a.label = "alpha".into();
    Ok(a)
}

/// `γ(y) = 1 - (1-y) Σ α_i y^i`, the probability that the common ancestor is
/// unfit when the unfit frequency is `y`.
pub fn ancestral_type_prob_diffusion(
    alpha: &SolutionVector,
    y: f64,
    indexing: SumIndexing,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&y) {
        return Err(Error::invalid(
            "y",
            None,
            format!("must lie in [0,1], got {y}"),
        ));
    }
    if y == 1.0 {
        return Ok(1.0);
    }
    let first = match indexing {
        SumIndexing::Shifted => 0,
        SumIndexing::Unshifted => 1,
    };
    let mut sum = 0.0;
    let mut yi = y.powi(first as i32);
    for i in first..=alpha.hi() as usize {
        let term = alpha.at(i as i64) * yi;
        sum += term;
        if i > first && term / (1.0 - y) < 1e-14 {
            break;
        }
        yi *= y;
    }
    Ok(1.0 - (1.0 - y) * sum)
}

/// Diffusion moments, tails and their identity checks.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiffusionReport {
    pub params: DiffusionParams,
    pub imax: usize,
    /// `β` over `[0:imax]` by quadrature.
    pub beta: SolutionVector,
    /// `α` over `[0:imax]` from the truncated tail solve.
    pub alpha: SolutionVector,
    /// Largest residual of the k-ASG recursion evaluated on the quadrature `β`.
    pub beta_residual: f64,
    pub checks: Vec<IdentityCheck>,
    pub pass: bool,
}

/// Checks the moment/tail identities of the diffusion limit up to `imax`.
pub fn diffusion_relations(p: &DiffusionParams, imax: usize, tol: f64) -> Result<DiffusionReport> {
    if imax < 2 {
        return Err(Error::invalid("imax", None, "must be at least 2"));
    }
    let (sigma, t1) = (p.sigma, p.theta * p.nu1);
    let beta = wright_moments(p, imax + 2, tol)?;
    let alpha = fearnhead_tails(p, imax + 2, tol)?;
    let integrals = wright_integrals(p, imax, tol)?;
    let kasg = p.kasg_schedule(imax + 2)?;
    let beta_residual = b_residual(&kasg, &beta.values, imax + 1);
    let mut checks = Vec::new();

    let mut first = IdentityCheck::new("moment ratios from tails", DIFFUSION_TOL);
    let mut prod = 1.0;
    for i in 2..=imax {
        if i >= 3 {
            if sigma == 0.0 {
                first = first.with_note("sigma = 0: indices i ≥ 3 are 0/0 and skipped");
                break;
            }
            prod *= (i as f64 - 1.0 + t1) / sigma;
        }
        let rhs =
            (alpha.at(i as i64 - 2) - alpha.at(i as i64 - 1)) / (alpha.at(0) - alpha.at(1)) * prod;
        first.compare(beta.at(i as i64) / beta.at(2), rhs);
    }
    checks.push(first);

    let mut second = IdentityCheck::new("tails from moment differences", DIFFUSION_TOL);
    let denom = beta.at(1) - beta.at(2);
    for i in 0..=imax {
        let i = i as i64;
        let rhs = (beta.at(i + 1) - beta.at(i + 2)) / denom * p.tail_factor(i as usize);
        second.compare(alpha.at(i), rhs);
    }
    checks.push(second);

    let mut ratio = IdentityCheck::new("beta1/beta2 closed form", DIFFUSION_TOL);
    let rhs = (1.0 + sigma + p.theta) / (1.0 + t1)
        - (alpha.at(1) - alpha.at(2)) / (alpha.at(0) - alpha.at(1)) * (2.0 + t1) / (1.0 + t1);
    ratio.compare(beta.at(1) / beta.at(2), rhs);
    checks.push(ratio);

    let mut integral = IdentityCheck::new("tail integral representation", DIFFUSION_TOL);
    for i in 0..=imax {
        let rhs = integrals.at(i as i64) / integrals.at(0) * p.tail_factor(i);
        integral.compare(alpha.at(i as i64), rhs);
    }
    checks.push(integral);

    let mut solve = IdentityCheck::new("moments against the absorption solve", DIFFUSION_TOL);
    let b = solve_absorption_b(&p.kasg_schedule(imax)?, DEFAULT_TOL.min(tol))?;
    for i in 0..=imax as i64 {
        solve.compare(beta.at(i), b.at(i));
    }
    checks.push(solve);

    let trim = |v: &SolutionVector| SolutionVector {
        values: v.values[..=imax].to_vec(),
        ..v.clone()
    };
    let pass = checks.iter().all(|c| c.pass);
    Ok(DiffusionReport {
        params: p.clone(),
        imax,
        beta: trim(&beta),
        alpha: trim(&alpha),
        beta_residual,
        checks,
        pass,
    })
}

/// Sup-distances between the Moran quantities at size `n` and their
/// diffusion limits over `[0:imax]`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LimitGap {
    pub n: usize,
    pub b_gap: f64,
    pub a_gap: f64,
}

pub fn finite_to_diffusion_gap(
    p: &DiffusionParams,
    n: usize,
    imax: usize,
    tol: f64,
) -> Result<LimitGap> {
    if imax > n {
        return Err(Error::Range {
            n: imax,
            lo: 0,
            hi: n,
        });
    }
    let m = p.moran(n)?;
    let bn = solve_absorption_b(&m.kasg_schedule()?, DEFAULT_TOL)?;
    let an = super::moran::tails(&m)?;
    let beta = wright_moments(p, imax, tol)?;
    let alpha = fearnhead_tails(p, imax, tol)?;
    let gap = |x: &SolutionVector, y: &SolutionVector| {
        (0..=imax as i64)
            .map(|i| (x.at(i) - y.at(i)).abs())
            .fold(0.0, f64::max)
    };
    Ok(LimitGap {
        n,
        b_gap: gap(&bn, &beta),
        a_gap: gap(&an, &alpha),
    })
}
