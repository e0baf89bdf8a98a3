//! Kelly-optimal portfolio laboratory.
//!
//! Simulates correlated GBM markets with Bertsimas-Lo market impact and
//! Markov regime switching, solves for the analytic Kelly optimum, and trains
//! on-policy actor-critic agents (A2C, clipped PPO) against it.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod analytic;
pub mod cli;
pub mod config;
pub mod env;
pub mod error;
pub mod hmm;
pub mod impact;
pub mod linalg;
pub mod rl;
pub mod rng;
pub mod sim;
pub mod stats;

pub use error::{Error, Result};
