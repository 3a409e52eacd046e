//! Monte-Carlo harness for TASER and the reference detectors: Rayleigh
//! trial generation, SNR / iteration sweeps with Wilson intervals, CSV and
//! JSON output, and the `detect` CLI.

pub mod channel;
pub mod cli;
pub mod error;
pub mod stats;
pub mod sweep;

pub use channel::{generate_coherent_trial, generate_jed_trial};
pub use error::{HarnessError, Result};
pub use stats::{crossing_snr, wilson_ci_95};
pub use sweep::{run_sweep, write_csv, ArithmeticMode, Modulation, SweepConfig, SweepRow, SystemMode};
