//! Triangular approximate semidefinite relaxation (TASER) for large-MIMO
//! data detection and SIMO joint channel estimation / data detection.
//!
//! The crate is organised bottom-up:
//!
//! * [`model`] turns complex-valued observations into the real-valued
//!   binary quadratic program `min s̃ᵀ T s̃` and applies Jacobi preconditioning.
//! * [`taser`] runs preconditioned forward-backward splitting on the
//!   lower-triangular factor of the relaxed problem.
//! * [`baselines`] holds the reference detectors (exhaustive ML, MMSE,
//!   matched-filter bounds, pilot-based channel estimation).
//! * [`fixed_point`] is a bit-accurate model of the 14-bit datapath.
//! * [`hw_model`] is the cycle and multiplication-count model of the
//!   triangular systolic array.
//! * [`pipeline`] wires the pieces into end-to-end detectors.

pub mod baselines;
pub mod error;
pub mod fixed_point;
pub mod hw_model;
pub mod model;
pub mod pipeline;
pub mod taser;

pub use error::{Error, Result};
pub use model::{
    build_coherent_problem, build_jed_problem, extract_complex_solution, jacobi_precondition,
    CoherentInstance, Constellation, Mode, PrecondProblem, RealProblem, Sense, SignConvention,
    SimoBurst,
};
pub use taser::{solve, TaserConfig, TaserOutput, TaserTrace, TriangularFactor};

/// Complex sample type used throughout.
pub type C64 = num_complex::Complex64;
