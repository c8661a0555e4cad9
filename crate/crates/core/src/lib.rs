//! Structure-preserving simulator and diagnostics lab for the 2-D stochastic
//! primitive equations. See the book under `book/` for a guided tour.

// negated comparisons reject NaN inputs on purpose
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod domain;
pub mod error;
pub mod operators;
pub mod spectral;
pub mod noise;
pub mod integrator;
pub mod analysis;
pub mod config;
pub mod io;
pub mod workflow;

pub use domain::{BcTag, Domain, DomainSpec, Physics, ScalarField, StateField};
pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/grid.md")]
    mod grid {}
    #[doc = include_str!("../../../book/src/operators.md")]
    mod operators {}
    #[doc = include_str!("../../../book/src/spectral.md")]
    mod spectral {}
    #[doc = include_str!("../../../book/src/noise.md")]
    mod noise {}
    #[doc = include_str!("../../../book/src/integrator.md")]
    mod integrator {}
    #[doc = include_str!("../../../book/src/analysis.md")]
    mod analysis {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
