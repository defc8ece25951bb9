//! Approximate counting and near-uniform sampling of CNF satisfying
//! assignments for bounded-degree formulas with wide clauses.
//!
//! The library is organized around a small set of cooperating modules:
//!
//! - [`cnf`] — formula representation, DIMACS parsing, simplification under
//!   partial assignments, component decomposition and structural statistics.
//! - [`oracle`] — exact ground truth: brute-force counting, exact conditional
//!   marginals and exact uniform sampling in rational arithmetic.
//! - [`lll`] — randomized resampling searches: satisfying assignments,
//!   marked/unmarked labelings and seed partial assignments.
//! - [`coupling`] — the paired-assignment coupling procedure, factorization
//!   checks, error attribution and 3-tree extraction.
//! - [`dtree`] — explicit stochastic decision trees, one-sided transforms,
//!   path products and the exact balance identity.
//! - [`certify`] — LP-feasibility certification of marginal intervals.
//! - [`pipeline`] — telescoping approximate counting and the sampling
//!   procedure, parameterized over a pluggable marginal oracle.
//! - [`inference`] — cause networks and posterior sampling via reduction to
//!   CNF sampling.
//!
//! All probabilities on the correctness-critical paths are exact rationals;
//! floating point appears only in diagnostics and in the fast LP backend.

pub mod cnf;
pub mod numeric;
pub mod oracle;

pub mod lll;

pub mod coupling;
pub mod dtree;

pub mod certify;

pub mod pipeline;

pub mod inference;

pub mod gen;
pub mod selfcheck;
pub mod sidecar;

mod error;

pub use error::{Error, Result};
