//! Numerical lab for the wave equation with acoustic boundary conditions on
//! non-locally reacting surfaces.
//!
//! The crate discretizes the coupled bulk/membrane system on a periodic strip,
//! a ball and a spherical shell, evolves it in time, computes its spectrum and
//! eigenmode expansions, and predicts long-time limits.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptote;
pub mod cli;
pub mod discrete;
pub mod error;
pub mod evolve;
pub mod lgl;
pub mod model;
pub mod spectral;
pub mod state;

pub use asymptote::{limit_damped, shell_exact, trivial_solution, AsymptoticPrediction, LimitCase, Trivial};
pub use discrete::{assemble, DiscreteOperator, Mode};
pub use error::{Error, Result};
pub use evolve::{evolve, simulate, step_cn, CrankNicolson, SimOptions, Trajectory};
pub use model::{build_geometry, census, validate_coefficients, Coefficients, Field, Geometry, GeometryConfig, GeometryKind};
pub use spectral::{eigenmodes, expand, EigenMode, Expansion};
pub use state::State;

// The guide under `book/` is compiled into doc modules so that `cargo test`
// runs every code listing in it.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/discretization.md")]
    mod discretization {}
    #[doc = include_str!("../../../book/src/invariants.md")]
    mod invariants {}
    #[doc = include_str!("../../../book/src/spectrum.md")]
    mod spectrum {}
    #[doc = include_str!("../../../book/src/asymptotics.md")]
    mod asymptotics {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}

#[cfg(doctest)]
#[doc = include_str!("../../../README.md")]
mod readme {}
