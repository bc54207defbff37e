//! Campaign driver, fixture formats and command-line support for sequence
//! Bayesian optimization.

pub mod campaign;
pub mod config;
pub mod error;
pub mod features;
pub mod io;
pub mod report;
pub mod validate;

pub use error::{Result, SeqboError};
