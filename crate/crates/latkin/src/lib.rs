//! Finite-lattice truncated wave kinetic equations.
//!
//! The crate evolves a real Wigner function `W` on the dual lattice of a
//! periodic cubic lattice under a cubic (DNLS) or cubic-plus-quadratic
//! (boson/fermion) collision operator with an approximate energy window, and
//! provides the oscillatory control-map machinery, weighted norms, and
//! propagator estimates used to analyse such equations.

pub mod bessel;
pub mod collision;
pub mod controlmap;
pub mod error;
pub mod grid;
pub mod harness;
pub mod interaction;
pub mod par;
pub mod phase;
pub mod propagator;
pub mod quad;
pub mod solver;
pub mod weights;

pub use error::{Error, Result};
pub use grid::{Lattice, SiteField, SpectralField};
pub use num_complex::Complex64;
