//! Config-driven experiment runner for mirror descent-ascent.
//!
//! A TOML config names a game from the catalog, a geometry, the schemes to
//! run, a list of iteration counts and a list of seeds. [`sweep`] runs every
//! combination in parallel and writes sorted, byte-reproducible result
//! files; [`verify`] runs the numerical checks from `mda_core::diagnostics`;
//! [`rates`] fits convergence slopes from a result CSV.

pub mod catalog;
pub mod config;
pub mod error;
pub mod rates;
pub mod sweep;
pub mod verify;

pub use config::ExperimentConfig;
pub use error::{CliError, Result};
pub use sweep::{run_sweep, write_outputs, ResultRow, RowFormat, SweepResult, CSV_HEADER};
pub use verify::{run_verify, VerifyReport};
