//! Per-capita rate schedules `(λ_i, μ_i, κ)`.
//!
//! Indices are 1-based. For a finite extent `N` every accessor honours the
//! boundary conventions `λ_0 = λ_N = 0` and `μ_0 = μ_{N+1} = 0`, so consumers
//! never special-case the edges.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::popgen::{DiffusionParams, MoranParams};

/// Size of the state space: finite `N`, or infinite with a truncation hint.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extent {
    Finite(usize),
    Infinite { truncation: usize },
}

impl Extent {
    /// Largest state index a generator is built on.
    pub fn top(&self) -> usize {
        match *self {
            Extent::Finite(n) => n,
            Extent::Infinite { truncation } => truncation,
        }
    }

    pub fn is_finite(&self) -> bool {
        matches!(self, Extent::Finite(_))
    }
}

/// `intercept + slope * i`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub intercept: f64,
    pub slope: f64,
}

impl Affine {
    pub fn constant(c: f64) -> Self {
        Affine {
            intercept: c,
            slope: 0.0,
        }
    }

    fn at(&self, i: usize) -> f64 {
        self.intercept + self.slope * i as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
enum Rates {
    /// `lambda[i-1] = λ_i`, `mu[i-1] = μ_i`.
    Table {
        lambda: Vec<f64>,
        mu: Vec<f64>,
    },
    Affine {
        lambda: Affine,
        mu: Affine,
    },
    /// `λ̄_i = μ_i`, `μ̄_i = λ_{i-1}` with `μ̄_1 = boundary`.
    Bar {
        base: Box<RateSchedule>,
        boundary: f64,
    },
}

/// A validated rate schedule. Immutable after construction.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RateSchedule {
    extent: Extent,
    kappa: f64,
    rates: Rates,
}

impl RateSchedule {
    /// Schedule from explicit arrays.
    ///
    /// For a finite extent `lambda` has `N-1` entries (or `N` with a trailing
    /// zero) and `mu` has `N` entries (or `N+1` with a trailing zero).
    pub fn from_arrays(extent: Extent, lambda: Vec<f64>, mu: Vec<f64>, kappa: f64) -> Result<Self> {
        let mut lambda = lambda;
        let mut mu = mu;
        if let Extent::Finite(n) = extent {
            match lambda.len() {
                l if l + 1 == n => {}
                l if l == n => {
                    if lambda[n - 1] != 0.0 {
                        return Err(Error::invalid(
                            "lambda",
                            Some(n),
                            "λ_N must be 0 for a finite extent",
                        ));
                    }
                    lambda.pop();
                }
                l => {
                    return Err(Error::invalid(
                        "lambda",
                        None,
                        format!(
                            "expected {} entries for extent {n}, got {l}",
                            n.saturating_sub(1)
                        ),
                    ))
                }
            }
            match mu.len() {
                l if l == n => {}
                l if l == n + 1 => {
                    if mu[n] != 0.0 {
                        return Err(Error::invalid(
                            "mu",
                            Some(n + 1),
                            "μ_{N+1} must be 0 for a finite extent",
                        ));
                    }
                    mu.pop();
                }
                l => {
                    return Err(Error::invalid(
                        "mu",
                        None,
                        format!("expected {n} entries for extent {n}, got {l}"),
                    ))
                }
            }
        } else if lambda.is_empty() || mu.is_empty() {
            return Err(Error::invalid(
                "lambda",
                None,
                "infinite extent needs non-empty arrays",
            ));
        }
        let s = RateSchedule {
            extent,
            kappa,
            rates: Rates::Table { lambda, mu },
        };
        s.validate(false)?;
        Ok(s)
    }

    /// Schedule with rates affine in the index.
    pub fn affine(extent: Extent, lambda: Affine, mu: Affine, kappa: f64) -> Result<Self> {
        let s = RateSchedule {
            extent,
            kappa,
            rates: Rates::Affine { lambda, mu },
        };
        s.validate(false)?;
        Ok(s)
    }

    /// Like [`RateSchedule::affine`] but tolerating `λ ≡ 0` (neutral population-genetics limits).
    pub(crate) fn affine_allow_zero_birth(
        extent: Extent,
        lambda: Affine,
        mu: Affine,
        kappa: f64,
    ) -> Result<Self> {
        let s = RateSchedule {
            extent,
            kappa,
            rates: Rates::Affine { lambda, mu },
        };
        s.validate(true)?;
        Ok(s)
    }

    pub fn constant(extent: Extent, lambda: f64, mu: f64, kappa: f64) -> Result<Self> {
        Self::affine(
            extent,
            Affine::constant(lambda),
            Affine::constant(mu),
            kappa,
        )
    }

    pub fn extent(&self) -> Extent {
        self.extent
    }

    /// `N` for finite extents, the truncation hint otherwise.
    pub fn top(&self) -> usize {
        self.extent.top()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    /// Copy of this schedule with a different truncation hint (no-op for finite extents).
    pub fn with_truncation(&self, truncation: usize) -> Self {
        let mut s = self.clone();
        if let Extent::Infinite { .. } = s.extent {
            s.extent = Extent::Infinite { truncation };
        }
        s
    }

    /// Largest index for which rates are defined; `None` if unbounded.
    pub fn coverage(&self) -> Option<usize> {
        match self.extent {
            Extent::Finite(n) => Some(n),
            Extent::Infinite { .. } => self.rates_coverage(),
        }
    }

    fn rates_coverage(&self) -> Option<usize> {
        match &self.rates {
            Rates::Table { lambda, mu } => Some(lambda.len().min(mu.len())),
            Rates::Affine { .. } => None,
            Rates::Bar { base, .. } => base.coverage(),
        }
    }

    /// `λ_i`, zero outside `[1:N-1]`.
    pub fn lambda(&self, i: usize) -> f64 {
        if i == 0 {
            return 0.0;
        }
        if let Extent::Finite(n) = self.extent {
            if i >= n {
                return 0.0;
            }
        }
        self.raw_lambda(i)
    }

    /// `μ_i`, zero outside `[1:N]`.
    pub fn mu(&self, i: usize) -> f64 {
        if i == 0 {
            return 0.0;
        }
        if let Extent::Finite(n) = self.extent {
            if i > n {
                return 0.0;
            }
        }
        self.raw_mu(i)
    }

    fn raw_lambda(&self, i: usize) -> f64 {
        match &self.rates {
            Rates::Table { lambda, .. } => lambda.get(i - 1).copied().unwrap_or(f64::NAN),
            Rates::Affine { lambda, .. } => lambda.at(i),
            Rates::Bar { base, .. } => base.mu(i),
        }
    }

    fn raw_mu(&self, i: usize) -> f64 {
        match &self.rates {
            Rates::Table { mu, .. } => mu.get(i - 1).copied().unwrap_or(f64::NAN),
            Rates::Affine { mu, .. } => mu.at(i),
            Rates::Bar { base, boundary } => {
                if i == 1 {
                    *boundary
                } else {
                    base.lambda(i - 1)
                }
            }
        }
    }

    /// Fails with [`Error::Truncation`] if rates up to `index` are not available.
    pub(crate) fn ensure_coverage(&self, index: usize) -> Result<()> {
        match self.coverage() {
            Some(c) if index > c && !self.extent.is_finite() => Err(Error::Truncation(format!(
                "rates are tabulated up to index {c}, but index {index} is required"
            ))),
            _ => Ok(()),
        }
    }

    fn validate(&self, allow_zero_birth: bool) -> Result<()> {
        if !(self.kappa.is_finite() && self.kappa > 0.0) {
            return Err(Error::invalid(
                "kappa",
                None,
                format!("must be finite and > 0, got {}", self.kappa),
            ));
        }
        let limit = match self.extent {
            Extent::Finite(0) => {
                return Err(Error::invalid("extent", None, "N must be at least 1"))
            }
            Extent::Infinite { truncation: 0 } => {
                return Err(Error::invalid(
                    "truncation",
                    None,
                    "truncation hint must be at least 1",
                ))
            }
            Extent::Finite(n) => n,
            Extent::Infinite { truncation } => self.rates_coverage().unwrap_or(truncation.max(64)),
        };
        for i in 1..=limit {
            let l = self.lambda(i);
            let interior = self.extent.is_finite() && i < limit || !self.extent.is_finite();
            if !l.is_finite() || l < 0.0 || (interior && l == 0.0 && !allow_zero_birth) {
                return Err(Error::invalid(
                    "lambda",
                    Some(i),
                    format!("λ_{i} = {l} must be finite and > 0"),
                ));
            }
            let m = self.mu(i);
            if !m.is_finite() || m < 0.0 {
                return Err(Error::invalid(
                    "mu",
                    Some(i),
                    format!("μ_{i} = {m} must be finite and ≥ 0"),
                ));
            }
        }
        if !self.extent.is_finite() {
            if let Rates::Affine { lambda, mu } = &self.rates {
                if lambda.slope < 0.0 {
                    return Err(Error::invalid(
                        "lambda",
                        None,
                        "affine λ must be non-decreasing for an infinite extent",
                    ));
                }
                if mu.slope < 0.0 {
                    return Err(Error::invalid(
                        "mu",
                        None,
                        "affine μ must be non-decreasing for an infinite extent",
                    ));
                }
            }
        }
        Ok(())
    }
}

/// The schedule of the bar process: `λ̄_i = μ_i`, `μ̄_i = λ_{i-1}`, extent `N+1`,
/// with the boundary value `μ̄_1 = λ_0 = 0`.
pub fn bar_transform(sched: &RateSchedule) -> Result<RateSchedule> {
    bar_transform_with_boundary(sched, 0.0)
}

/// [`bar_transform`] with an explicit value for `μ̄_1 = λ_0`.
pub fn bar_transform_with_boundary(sched: &RateSchedule, lambda0: f64) -> Result<RateSchedule> {
    if !(lambda0.is_finite() && lambda0 >= 0.0) {
        return Err(Error::invalid(
            "lambda0",
            None,
            "boundary rate must be finite and ≥ 0",
        ));
    }
    let extent = match sched.extent {
        Extent::Finite(n) => Extent::Finite(n + 1),
        Extent::Infinite { truncation } => Extent::Infinite {
            truncation: truncation + 1,
        },
    };
    let s = RateSchedule {
        extent,
        kappa: sched.kappa,
        rates: Rates::Bar {
            base: Box::new(sched.clone()),
            boundary: lambda0,
        },
    };
    s.validate(false)?;
    Ok(s)
}

/// Verdict of the partial-sum heuristic. Never a proof.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    DivergencePlausible,
    DivergenceNotPlausible,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PartialSum {
    /// `Σ_{i ≤ M} 1/r_i` over the nonzero terms.
    pub sum: f64,
    /// Growth over the last decade of indices, `S(M) - S(⌊M/10⌋)`.
    pub last_decade: f64,
    /// Indices whose rate is zero and were skipped.
    pub skipped: Vec<usize>,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TailDiagnostic {
    pub m: usize,
    pub lambda: PartialSum,
    pub mu: PartialSum,
}

/// Partial sums of `1/λ_i` and `1/μ_i` up to `m`.
///
/// Divergence is deemed plausible when the last decade contributes at least
/// `ln(10)/100`, i.e. the sum still grows like a (damped) logarithm.
pub fn tail_condition_diagnostic(sched: &RateSchedule, m: usize) -> TailDiagnostic {
    let mut m = m.max(1);
    if let Some(c) = sched.coverage() {
        m = m.min(c);
    }
    let lam_top = if sched.extent.is_finite() {
        m.min(sched.top().saturating_sub(1))
    } else {
        m
    };
    TailDiagnostic {
        m,
        lambda: partial_sum(lam_top, |i| sched.lambda(i)),
        mu: partial_sum(m, |i| sched.mu(i)),
    }
}

fn partial_sum(m: usize, rate: impl Fn(usize) -> f64) -> PartialSum {
    let mut sum = 0.0;
    let mut at_decade = 0.0;
    let mut skipped = Vec::new();
    let decade = m / 10;
    for i in 1..=m {
        let r = rate(i);
        if r == 0.0 {
            skipped.push(i);
        } else {
            sum += 1.0 / r;
        }
        if i == decade {
            at_decade = sum;
        }
    }
    let last_decade = sum - at_decade;
    let verdict = if last_decade >= std::f64::consts::LN_10 / 100.0 {
        Verdict::DivergencePlausible
    } else {
        Verdict::DivergenceNotPlausible
    };
    PartialSum {
        sum,
        last_decade,
        skipped,
        verdict,
    }
}

/// Schedule extent as written in a description: an integer `N` or `"infinite"`.
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum ExtentSpec {
    Finite(usize),
    Named(String),
}

/// A named closed-form family.
#[derive(Clone, Debug, PartialEq, Deserialize, Serialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum FamilySpec {
    Constant {
        lambda: f64,
        mu: f64,
    },
    Affine {
        lambda: Affine,
        mu: Affine,
    },
    MoranKasg(MoranParams),
    MoranPldasg(MoranParams),
    /// Both ASG schedules of one Moran population.
    Moran(MoranParams),
    DiffusionKasg(DiffusionParams),
    DiffusionPldasg(DiffusionParams),
}

/// Schedule description (schema v1): `extent`, `kappa` and either
/// `lambda`/`mu` arrays or a `family`.
#[derive(Clone, Debug, Default, PartialEq, Deserialize, Serialize)]
pub struct ScheduleSpec {
    pub extent: Option<ExtentSpec>,
    pub truncation: Option<usize>,
    pub kappa: Option<f64>,
    pub lambda: Option<Vec<f64>>,
    pub mu: Option<Vec<f64>>,
    pub family: Option<FamilySpec>,
}

/// One schedule, or the k-ASG/pLD-ASG pair expanded from a Moran family.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleSet {
    Single(RateSchedule),
    MoranPair {
        kasg: RateSchedule,
        pldasg: RateSchedule,
    },
}

const DEFAULT_TRUNCATION: usize = 200;

impl ScheduleSpec {
    fn extent(&self, required: bool) -> Result<Option<Extent>> {
        match &self.extent {
            None if required => Err(Error::Spec("extent".into())),
            None => Ok(None),
            Some(ExtentSpec::Finite(n)) => Ok(Some(Extent::Finite(*n))),
            Some(ExtentSpec::Named(s)) if s == "infinite" => Ok(Some(Extent::Infinite {
                truncation: self.truncation.unwrap_or(DEFAULT_TRUNCATION),
            })),
            Some(ExtentSpec::Named(s)) => Err(Error::invalid(
                "extent",
                None,
                format!("expected a positive integer or \"infinite\", got {s:?}"),
            )),
        }
    }

    fn kappa(&self) -> Result<f64> {
        self.kappa.ok_or_else(|| Error::Spec("kappa".into()))
    }

    fn reject_kappa(&self, family: &str) -> Result<()> {
        if self.kappa.is_some() {
            return Err(Error::invalid(
                "kappa",
                None,
                format!("family `{family}` derives κ from its parameters"),
            ));
        }
        Ok(())
    }

    fn check_moran_extent(&self, p: &MoranParams) -> Result<()> {
        match self.extent(false)? {
            None => Ok(()),
            Some(Extent::Finite(n)) if n == p.n => Ok(()),
            Some(_) => Err(Error::invalid(
                "extent",
                None,
                format!("must equal the population size {}", p.n),
            )),
        }
    }

    fn diffusion_extent(&self) -> Result<Extent> {
        match self.extent(false)? {
            None => Ok(Extent::Infinite {
                truncation: self.truncation.unwrap_or(DEFAULT_TRUNCATION),
            }),
            Some(e @ Extent::Infinite { .. }) => Ok(e),
            Some(Extent::Finite(_)) => Err(Error::invalid(
                "extent",
                None,
                "diffusion families have infinite extent",
            )),
        }
    }
}

/// Builds and validates the schedule(s) described by `spec`.
pub fn make_schedule_set(spec: &ScheduleSpec) -> Result<ScheduleSet> {
    if spec.family.is_some() && (spec.lambda.is_some() || spec.mu.is_some()) {
        return Err(Error::invalid(
            "family",
            None,
            "give either `family` or `lambda`/`mu` arrays, not both",
        ));
    }
    let single = |s| Ok(ScheduleSet::Single(s));
    match &spec.family {
        None => {
            let extent = spec.extent(true)?.expect("required");
            let kappa = spec.kappa()?;
            let lambda = spec
                .lambda
                .clone()
                .ok_or_else(|| Error::Spec("lambda".into()))?;
            let mu = spec.mu.clone().ok_or_else(|| Error::Spec("mu".into()))?;
            single(RateSchedule::from_arrays(extent, lambda, mu, kappa)?)
        }
        Some(FamilySpec::Constant { lambda, mu }) => {
            let extent = spec.extent(true)?.expect("required");
            single(RateSchedule::constant(extent, *lambda, *mu, spec.kappa()?)?)
        }
        Some(FamilySpec::Affine { lambda, mu }) => {
            let extent = spec.extent(true)?.expect("required");
            single(RateSchedule::affine(extent, *lambda, *mu, spec.kappa()?)?)
        }
        Some(FamilySpec::MoranKasg(p)) => {
            spec.reject_kappa("moran-kasg")?;
            spec.check_moran_extent(p)?;
            single(p.kasg_schedule()?)
        }
        Some(FamilySpec::MoranPldasg(p)) => {
            spec.reject_kappa("moran-pldasg")?;
            spec.check_moran_extent(p)?;
            single(p.pldasg_schedule()?)
        }
        Some(FamilySpec::Moran(p)) => {
            spec.reject_kappa("moran")?;
            spec.check_moran_extent(p)?;
            Ok(ScheduleSet::MoranPair {
                kasg: p.kasg_schedule()?,
                pldasg: p.pldasg_schedule()?,
            })
        }
        Some(FamilySpec::DiffusionKasg(p)) => {
            spec.reject_kappa("diffusion-kasg")?;
            single(p.kasg_schedule(spec.diffusion_extent()?.top())?)
        }
        Some(FamilySpec::DiffusionPldasg(p)) => {
            spec.reject_kappa("diffusion-pldasg")?;
            single(p.pldasg_schedule(spec.diffusion_extent()?.top())?)
        }
    }
}

/// Builds a single schedule; the two-schedule `moran` family is rejected here.
pub fn make_schedule(spec: &ScheduleSpec) -> Result<RateSchedule> {
    match make_schedule_set(spec)? {
        ScheduleSet::Single(s) => Ok(s),
        ScheduleSet::MoranPair { .. } => Err(Error::invalid(
            "family",
            None,
            "`moran` expands to two schedules; use make_schedule_set",
        )),
    }
}
