//! State-vector engine and experiment harness for Trotter errors in the
//! driven quantum Ising chain.
//!
//! The crate is organised bottom-up:
//!
//! * [`spin`]: basis convention, the Ising model and its operators.
//! * [`evolve`]: Trotter stepping, Krylov exact evolution, dense and Floquet
//!   diagonalization.
//! * [`observables`]: trajectories, long-time averages, dynamical IPR, OTOCs.
//! * [`perturbation`]: Magnus operators and the perturbative error coefficients.
//! * [`noise`]: timing and ensemble gate noise, plus a Lindblad oracle.
//! * [`harness`]: configuration, experiment runner and result persistence.

pub mod error;
pub mod evolve;
pub mod harness;
pub mod linalg;
pub mod noise;
pub mod observables;
pub mod perturbation;
pub mod spin;

pub use error::{Result, TrotterError};
pub use spin::{IsingModel, SpinState};

/// Crate version recorded in every output header.
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");
