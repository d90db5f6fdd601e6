//! Conditional Kendall's tau as a sparse linear model in a transformed scale.
//!
//! A kernel-weighted first stage estimates the conditional Kendall's tau at a
//! set of design points; an ℓ1-penalized least-squares second stage then
//! expresses `Λ(τ(z))` in a dictionary of basis functions. The crate also
//! ships the simplifying-assumption Wald test, copula simulators and a
//! benchmark harness.

pub mod bench;
pub mod ckt;
pub mod dictionary;
pub mod error;
pub mod inference;
pub mod kernel;
pub mod lasso;
pub mod pipeline;
pub mod sample;
pub mod simulation;
pub mod transform;

pub use error::{Error, Result};
