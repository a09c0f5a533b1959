//! Birth–death processes with catastrophes, their Siegmund duals, and the
//! ancestral selection graphs of the two-type Moran model.
//!
//! The four processes `X`, `Z`, `X*`, `Z*` share one [`RateSchedule`]. Exact
//! quantities (`b`, `a`, stationary laws) come from [`solvers`], the
//! duality relations from [`duality`], Monte Carlo estimates from
//! [`montecarlo`], and the population-genetic application from [`popgen`].

pub mod duality;
pub mod error;
pub mod generator;
pub mod montecarlo;
pub mod popgen;
pub mod report;
pub mod schedule;
pub mod solvers;

pub use error::{Error, Result};
pub use generator::{
    build_generator, build_marked_generator, Generator, MarkedGenerator, MarkedState, ProcessKind,
    State,
};
pub use schedule::{Affine, Extent, RateSchedule};
pub use solvers::{
    solve_absorption_b, solve_tail_a, stationary_distribution, SolutionVector, DEFAULT_TOL,
};
