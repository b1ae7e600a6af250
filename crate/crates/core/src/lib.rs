//! Simulation and verification toolkit for a random binary wealth-exchange
//! system.
//!
//! The same exchange rule — pick an ordered pair of agents, pool their
//! wealth, hand the first agent a uniform share of the pool — is realised
//! at three levels, all implemented and cross-checked here:
//!
//! * [`chains`]: the integer-valued chain on compositions of `n`, its
//!   continuous-state analogue, the Poissonized continuous-time chain, and
//!   a coupled run of the first two that certifies the `2k/n` pathwise
//!   error bound.
//! * [`measures`]: empirical measures, the pair measure, the empirical
//!   collision bracket and the martingale residual with its variance bound.
//! * [`kinetic`]: the mean-field collision operator in weak and density
//!   form, a grid solver for the kinetic equation, and the exponential
//!   equilibrium families.
//! * [`partitions`]: samplers for uniform compositions and the
//!   geometric/exponential simplex constructions with their limit checks.
//! * [`oracle`]: exact transition matrices and stationary distributions for
//!   small instances, plus the statistical distances (KS, Wasserstein-1,
//!   chi-square) used by every acceptance test.
//!
//! All randomness flows through [`chains::RngStream`], keyed by
//! `(seed, stream_id)`, so every ensemble member is independently
//! reproducible.

pub mod chains;
pub mod kinetic;
pub mod measures;
pub mod oracle;
pub mod partitions;
pub mod state;

/// Crate-wide error type.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("resource limit exceeded: {0}")]
    Resource(String),
    #[error("integer overflow: {0}")]
    Overflow(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numerical instability: {0}")]
    Instability(String),
    #[error("no convergence: {0}")]
    NonConvergence(String),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
