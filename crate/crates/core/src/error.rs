use thiserror::Error;

use crate::generator::State;

/// Errors raised by schedule construction, the solvers and the identity checks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("missing field `{0}`")]
    Spec(String),

    #[error("invalid `{field}`{}: {reason}", index.map(|i| format!(" at index {i}")).unwrap_or_default())]
    Validation {
        field: String,
        index: Option<usize>,
        reason: String,
    },

    #[error("level {n} out of range [{lo}:{hi}]")]
    Range { n: usize, lo: usize, hi: usize },

    #[error("truncation: {0}")]
    Truncation(String),

    #[error("no convergence after truncation level {level} (last sup-change {change:.3e})")]
    NoConvergence { level: usize, change: f64 },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("generator is not irreducible: state {0:?} {1}")]
    NotIrreducible(State, &'static str),

    #[error(
        "generator is not stochastically monotone: dual rate q*({from:?},{to:?}) = {rate:.6e}"
    )]
    NotMonotone { from: State, to: State, rate: f64 },

    #[error("degenerate denominator in {0}")]
    DegenerateDenominator(&'static str),

    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("quadrature did not converge with {nodes} nodes (relative change {change:.3e})")]
    QuadratureNoConvergence { nodes: usize, change: f64 },
}

impl Error {
    pub(crate) fn invalid(field: &str, index: Option<usize>, reason: impl Into<String>) -> Self {
        Error::Validation {
            field: field.to_string(),
            index,
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
