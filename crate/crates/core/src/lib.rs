//! Posterior simulation of rare-event exceedance probabilities for expensive
//! deterministic simulators.
//!
//! The pipeline fits the simulator's uncertain inputs (Normal or Weibull)
//! by adaptive Metropolis, builds a Gaussian-process surrogate of the
//! simulator from a small Latin hypercube design, and propagates both sources
//! of uncertainty into a posterior sample of the exceedance probability.

pub mod dists;
pub mod error;
pub mod failure;
pub mod gpcore;
pub mod ingest;
pub mod kriging;
pub mod mcmc;
pub mod numdiff;
pub mod optim;
pub mod seed;
pub mod tuning;

pub use error::{Error, Result};
