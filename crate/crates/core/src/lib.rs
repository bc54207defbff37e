//! Numerical core for batch Bayesian optimization over protein sequences.
//!
//! Everything here is pure computation over in-memory data and builds without
//! the standard library; file formats, caching providers, campaigns and the
//! command line live in the `seqbo` crate.
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod acquisition;
pub mod encoding;
pub mod error;
pub mod gp;
pub mod hash;
pub mod kernels;
pub mod linalg;
pub mod method;
pub mod nsga;
pub mod optim;
pub mod oracle;
pub mod plm;
pub mod seq;
pub mod structure;

pub use error::{Error, Result};
