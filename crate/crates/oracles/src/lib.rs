//! Brute-force reference computations for the guarantees the model relies on:
//! walk-based structural information, refinement signal-to-noise, the
//! Gaussian-bias center gradient, and the attention-ratio gain of the bias.
//!
//! Every check returns a [`CheckReport`]; [`run_suite`] runs them all.

mod error;
pub mod euler;
pub mod katz;
pub mod mu_gradient;
pub mod snr;
pub mod suite;

pub use error::{OracleError, Result};
pub use suite::{run_suite, CheckReport, SuiteOptions};
