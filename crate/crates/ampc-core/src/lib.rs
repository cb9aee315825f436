//! Multi-fidelity polynomial chaos surrogates for Bayesian inverse problems.
//!
//! The crate builds cheap polynomial surrogates of expensive forward maps,
//! runs Metropolis-Hastings against them, and adaptively refines the
//! surrogate with small batches of true model solves concentrated where the
//! chain actually goes. The pieces are deliberately separable:
//!
//! * [`basis`] / [`design`] / [`regression`] - orthonormal polynomial
//!   families, sampling plans, and weighted least-squares fitting.
//! * [`surrogate`] - prior-based and locally corrected expansions.
//! * [`models`] - the forward maps themselves (analytic toys plus two
//!   finite-difference solvers) behind one trait, with an evaluation
//!   ledger and point cache.
//! * [`bayes`] / [`mcmc`] - posterior assembly and the samplers, including
//!   the adaptive driver that interleaves surrogate sub-chains with
//!   true-model acceptance checks.
//! * [`diagnostics`] - grid references, divergences, and chain summaries.
//!
//! The crate is `no_std` (with `alloc`); everything that touches files or
//! the command line lives in the companion binary crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod basis;
pub mod bayes;
pub mod design;
pub mod diagnostics;
pub mod linalg;
pub mod mcmc;
pub mod models;
pub mod regression;
pub mod surrogate;

/// SplitMix64 seed derivation, so the one user-facing seed can fan out into
/// independent streams (design sampling, noise, chain, refinement batches)
/// without the streams aliasing each other. Stream 0 is the prior-surrogate
/// fit; the adaptive sampler takes streams 1.. for its correction batches.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    let mut x = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}
