//! Command implementations behind the `gelgt` binary.

pub mod config;
pub mod run;

pub use config::{Ablations, RunConfig};
pub use run::{load_dataset, run_training, RunResult};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const VERIFICATION_FAILED: i32 = 1;
    pub const CONFIG_ERROR: i32 = 2;
    pub const NUMERIC_ABORT: i32 = 3;
}
