//! Scenario files, parameter sweeps and built-in experiment reproductions on
//! top of `setfuse-core`.

pub mod error;
pub mod reproduce;
pub mod run;
pub mod scenario;
pub mod table;

pub use error::CliError;
