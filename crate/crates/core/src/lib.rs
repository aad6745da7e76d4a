//! Simulation and martingale-representation toolkit for Ito-Markov additive
//! processes: a finite-state background chain modulating an Ito-Levy
//! component, with extra jumps triggered by the chain's transitions.
//!
//! The crate simulates the process exactly (event-driven chain, exact jump
//! records, regime-split continuous part), builds the orthonormal martingale
//! families from closed-form moment matrices, verifies the predictable
//! representation by regression-based integrand estimation with out-of-sample
//! replication, and checks the polynomial representation with a pathwise
//! reconstruction oracle.

pub mod chain;
pub mod dist;
pub mod error;
pub mod harness;
pub mod impulse;
pub mod levy;
pub mod linalg;
pub mod oracle;
pub mod ortho;
pub mod represent;
pub mod rng;
pub mod stats;

pub use error::{Error, Result};
