//! Bayesian state-space modeling of insurance loss ratios with
//! trans-dimensional MCMC over three nested dynamics (autoregressive,
//! random-walk, exchangeable), plus samplers, proposals, diagnostics and
//! synthetic-data tooling.

pub mod conditionals;
pub mod config;
pub mod diagnostics;
pub mod error;
pub mod gibbs;
pub mod marginal;
pub mod model;
pub mod output;
pub mod rjmcmc;
pub mod synthetic;

pub use error::{Error, Result};
