//! Command-line front end: verification at one radius, maximal-radius
//! search, schedule tuning, cost sweeps, synthetic models and graph export.

pub mod bench;
pub mod commands;
pub mod plan;
pub mod verify;

pub use commands::{run, Cli, Command, EXIT_ERROR, EXIT_NOT_VERIFIED, EXIT_VERIFIED};
pub use verify::{Mode, Verifier, VerifyReport};
