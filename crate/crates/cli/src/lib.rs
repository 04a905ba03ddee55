//! Command-line front end for `optdiff`: JSON problem and tangent files,
//! differentiation runs, and seeded reproductions of the tutorial examples
//! (SVM and ridge sensitivities, hyperparameter descent, projection layers)
//! writing CSV or JSON.

pub mod commands;
pub mod demos;
pub mod error;
pub mod format;
pub mod schema;
pub mod synthetic;

pub use error::{CliError, CliResult};
