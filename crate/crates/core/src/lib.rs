//! Simulation and learning toolkit for EV charging-station scheduling.
//!
//! * [`env`]: per-EV charging-station MDP.
//! * [`llf`]: least-laxity-first disaggregation of a total charging budget,
//!   plus an exhaustive feasibility search.
//! * [`agg`]: laxity-group aggregation of the state and its dynamics.
//! * [`policy`]: linear Gaussian policy trained by policy gradient.
//! * [`baseline`]: linear approximate-Q baseline on binary features.
//! * [`data`]: price and arrival ingestion, synthetic day generation.
//! * [`eval`]: deterministic day evaluation and comparison.
//! * [`cli`]: command-line front end.

// Negated float comparisons are used on purpose so that NaN is rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod agg;
pub mod baseline;
pub mod cli;
pub mod data;
pub mod env;
pub mod eval;
pub mod llf;
pub mod policy;
pub mod seed;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Env(#[from] env::EnvError),
    #[error(transparent)]
    Llf(#[from] llf::LlfError),
    #[error(transparent)]
    Agg(#[from] agg::AggError),
    #[error(transparent)]
    Policy(#[from] policy::PolicyError),
    #[error(transparent)]
    Qe(#[from] baseline::QeError),
    #[error(transparent)]
    Data(#[from] data::DataError),
}
