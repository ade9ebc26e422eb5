//! Artificial atom coupled to a Josephson junction array terminated by a
//! lossy waveguide: open-system poles, atomic mode tracking, closed-system
//! Hamiltonian couplings, perturbative baselines and emission dynamics.

pub mod circuit;
pub mod coupling;
pub mod dynamics;
pub mod error;
pub mod nonlinear;
pub mod oracle;
pub mod perturbative;
pub mod spectral;
pub mod special;
pub mod tracker;
pub mod tridiag;
pub mod units;

pub use circuit::{build_closed_jja, build_reduced_system, derive_atom_elements, CircuitParams, ReducedSystem};
pub use error::{QedError, Result};
