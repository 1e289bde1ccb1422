//! Synthesis and robustness analysis of optimal quantum annealing protocols
//! under coherent control errors.
//!
//! The crate is organised bottom-up:
//!
//! * [`operators`] builds Ising Hamiltonians and evaluates the norm regularizer
//!   `q(u)` together with its subdifferential.
//! * [`dynamics`] propagates piecewise-constant protocols, optionally under a
//!   multiplicative control error, and evaluates fidelity bounds.
//! * [`control`] computes costs, co-states and exact gradients and solves the
//!   nominal, regularized and QAOA problems by projected gradient descent.
//! * [`pmp`] evaluates maximum-principle diagnostics on a solved protocol.
//! * [`robustness`] runs error-ensemble experiments and random-model sweeps.
//! * [`cli`] wires everything to configuration files and CSV/JSON output.

pub mod cli;
pub mod control;
pub mod dynamics;
pub mod error;
pub mod linalg;
pub mod operators;
pub mod pmp;
pub mod robustness;

pub use error::{Error, Result};
pub use operators::{
    build_ising, ground_state_of_b, HamiltonianPair, IsingModel, MatrixNorm, NormKind,
    SubgradientInterval,
};

/// Version string embedded in every output file.
pub const VERSION: &str = concat!("robust-anneal ", env!("CARGO_PKG_VERSION"));
