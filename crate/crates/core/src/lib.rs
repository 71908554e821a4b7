//! Neural adaptive sequential Monte Carlo.
//!
//! A particle filter whose proposal is a trainable neural density model,
//! adapted by stochastic gradient steps on the inclusive KL divergence
//! between the filtering posterior and the proposal; a particle marginal
//! Metropolis–Hastings sampler built on the filter; and exact Kalman
//! oracles for validation.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adapt;
pub mod cli;
pub mod error;
pub mod metrics;
pub mod models;
pub mod nnet;
pub mod pmmh;
pub mod prng;
pub mod proposals;
pub mod smc;

pub use error::{Error, Result};
