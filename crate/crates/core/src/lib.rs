//! Averaging reduction and stochastic stability analysis for planar
//! asymptotically autonomous Hamiltonian systems with multiplicative noise.
//!
//! The pipeline runs in stages: periodic orbits of the limiting system
//! ([`hamiltonian`]), the decaying perturbation series ([`perturbation`]),
//! energy-angle coefficients and the averaging recursion ([`averaging`]),
//! stability verdicts ([`classifier`]), and Monte Carlo validation
//! ([`sde`], [`montecarlo`]).

pub mod averaging;
pub mod classifier;
pub mod error;
pub mod expr;
pub mod hamiltonian;
pub mod montecarlo;
pub mod numeric;
pub mod perturbation;
pub mod sde;

pub use error::{Error, Result};
