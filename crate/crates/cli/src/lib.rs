//! Command-line harness for the `huge2-core` kernels: HUG2 tensor files,
//! GAN layer presets, benchmarking and randomized verification.

pub mod bench;
pub mod cli;
pub mod error;
pub mod format;
pub mod layers;
pub mod paths;
pub mod verify;

pub use error::CliError;
