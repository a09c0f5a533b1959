//! The two-type Moran model with selection and mutation, its k-ASG and
//! pLD-ASG line-counting processes, and their diffusion limits.

mod diffusion;
mod moran;
mod quadrature;

pub use diffusion::{
    ancestral_type_prob_diffusion, diffusion_relations, fearnhead_tails, finite_to_diffusion_gap,
    wright_integrals, wright_moments, DiffusionReport, LimitGap, DIFFUSION_TOL,
};
pub use moran::{
    ancestral_type_prob_finite, finite_relations, moran_forward, sampling_moments, FiniteReport,
    MoranForward, FINITE_TOL,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which summation range to use for the ancestral-type probabilities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SumIndexing {
    /// `Σ_{j≥1} a_{j-1} ...` and `Σ_{i≥0} α_i y^i`; satisfies `g(0) = 0`
    /// and reduces to `y` under neutrality.
    #[default]
    Shifted,
    /// `Σ_{j≥1} a_j ...` and `Σ_{i≥1} α_i y^i`.
    Unshifted,
}

/// Resolves `(nu0, nu1)` from either or both, requiring `nu0 + nu1 = 1` and
/// `nu0 ∈ (0,1)`.
pub fn mutation_split(nu0: Option<f64>, nu1: Option<f64>) -> Result<(f64, f64)> {
    let (nu0, nu1) = match (nu0, nu1) {
        (Some(a), None) => (a, 1.0 - a),
        (None, Some(b)) => (1.0 - b, b),
        (Some(a), Some(b)) if (a + b - 1.0).abs() <= 1e-12 => (a, b),
        (Some(_), Some(_)) => return Err(Error::invalid("nu0", None, "nu0 + nu1 must equal 1")),
        (None, None) => return Err(Error::Spec("nu0".into())),
    };
    if !(nu0 > 0.0 && nu0 < 1.0) {
        return Err(Error::invalid(
            "nu0",
            None,
            format!("must lie in (0,1), got {nu0}"),
        ));
    }
    Ok((nu0, nu1))
}

/// Parameters of a Moran population: size `n`, selection rate `s ≥ 0`,
/// mutation rate `u > 0` and mutation target probabilities `nu0 + nu1 = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMoran")]
pub struct MoranParams {
    pub n: usize,
    pub s: f64,
    pub u: f64,
    pub nu0: f64,
    pub nu1: f64,
}

#[derive(Deserialize)]
struct RawMoran {
    n: usize,
    s: f64,
    u: f64,
    nu0: Option<f64>,
    nu1: Option<f64>,
}

impl TryFrom<RawMoran> for MoranParams {
    type Error = Error;

    fn try_from(r: RawMoran) -> Result<Self> {
        let (nu0, _) = mutation_split(r.nu0, r.nu1)?;
        MoranParams::new(r.n, r.s, r.u, nu0)
    }
}

impl MoranParams {
    pub fn new(n: usize, s: f64, u: f64, nu0: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::invalid(
                "n",
                None,
                "population size must be at least 1",
            ));
        }
        if !(s.is_finite() && s >= 0.0) {
            return Err(Error::invalid(
                "s",
                None,
                format!("must be finite and ≥ 0, got {s}"),
            ));
        }
        if !(u.is_finite() && u > 0.0) {
            return Err(Error::invalid(
                "u",
                None,
                format!("must be finite and > 0, got {u}"),
            ));
        }
        let (nu0, nu1) = mutation_split(Some(nu0), None)?;
        Ok(MoranParams { n, s, u, nu0, nu1 })
    }

    /// Same selection and mutation split with another size and mutation rate.
    pub fn resized(&self, n: usize, u: f64) -> Result<Self> {
        MoranParams::new(n, self.s, u, self.nu0)
    }

    /// `N u / (N-1)`, the mutation rate of the smaller population in the
    /// k-ASG/pLD-ASG correspondence.
    pub fn u_left(&self) -> f64 {
        self.n as f64 * self.u / (self.n as f64 - 1.0)
    }

    /// `N u / (N+1)`.
    pub fn u_right(&self) -> f64 {
        self.n as f64 * self.u / (self.n as f64 + 1.0)
    }
}

/// Diffusion-limit parameters: scaled selection `sigma ≥ 0`, scaled mutation
/// `theta > 0`, and `nu0 + nu1 = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDiffusion")]
pub struct DiffusionParams {
    pub sigma: f64,
    pub theta: f64,
    pub nu0: f64,
    pub nu1: f64,
}

#[derive(Deserialize)]
struct RawDiffusion {
    sigma: f64,
    theta: f64,
    nu0: Option<f64>,
    nu1: Option<f64>,
}

impl TryFrom<RawDiffusion> for DiffusionParams {
    type Error = Error;

    fn try_from(r: RawDiffusion) -> Result<Self> {
        let (nu0, _) = mutation_split(r.nu0, r.nu1)?;
        DiffusionParams::new(r.sigma, r.theta, nu0)
    }
}

impl DiffusionParams {
    pub fn new(sigma: f64, theta: f64, nu0: f64) -> Result<Self> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(Error::invalid(
                "sigma",
                None,
                format!("must be finite and ≥ 0, got {sigma}"),
            ));
        }
        if !(theta.is_finite() && theta > 0.0) {
            return Err(Error::invalid(
                "theta",
                None,
                format!("must be finite and > 0, got {theta}"),
            ));
        }
        let (nu0, nu1) = mutation_split(Some(nu0), None)?;
        Ok(DiffusionParams {
            sigma,
            theta,
            nu0,
            nu1,
        })
    }

    /// Moran parameters with `s = σ/N` and `u = θ/N`.
    pub fn moran(&self, n: usize) -> Result<MoranParams> {
        MoranParams::new(n, self.sigma / n as f64, self.theta / n as f64, self.nu0)
    }
}

/// Outcome of one identity check: the largest relative discrepancy between
/// two independent computation routes.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub name: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Number of indices compared.
    pub points: usize,
    pub pass: bool,
    pub note: Option<String>,
}

impl IdentityCheck {
    fn new(name: &str, tolerance: f64) -> Self {
        IdentityCheck {
            name: name.to_string(),
            max_rel_error: 0.0,
            tolerance,
            points: 0,
            pass: true,
            note: None,
        }
    }

    fn compare(&mut self, lhs: f64, rhs: f64) {
        let err = rel_error(lhs, rhs);
        self.points += 1;
        if err > self.max_rel_error || err.is_nan() {
            self.max_rel_error = err;
        }
        self.pass = self.max_rel_error <= self.tolerance;
    }

    fn with_note(mut self, note: impl Into<String>) -> Self {
        self.note = Some(note.into());
        self
    }
}

/// `|a-b| / max(|a|,|b|)`, zero when both agree exactly.
pub(crate) fn rel_error(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// `k^{(i)} / n^{(i)}` with falling factorials; zero when `k < i`.
pub(crate) fn falling_ratio(k: usize, n: usize, i: usize) -> f64 {
    (0..i)
        .map(|m| (k as f64 - m as f64) / (n as f64 - m as f64))
        .product()
}

/// Normalises weights given by their logarithms.
pub(crate) fn normalize_logs(logs: &[f64]) -> Vec<f64> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| x / total).collect()
}
