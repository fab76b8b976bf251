//! Smooth Feshbach–Schur maps and a numerical renormalization flow on a
//! truncated bosonic Fock space.

pub mod config;
pub mod cutoffs;
pub mod ensemble;
pub mod error;
pub mod fockspace;
pub mod flow;
pub mod fsmap;
pub mod kernels;
pub mod report;
pub mod suites;

pub use error::{Error, Result};
