//! File formats, quantile cache and command-line pipeline for operator
//! scaling stable random fields.

pub mod cache;
pub mod cli;
pub mod error;
pub mod formats;
pub mod pipeline;
pub mod psi_spec;

pub use error::CliError;
