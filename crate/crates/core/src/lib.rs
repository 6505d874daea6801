//! Local differential privacy for neural text representations.
//!
//! The crate covers the full desk-scale pipeline: a dense numeric core
//! ([`tensor`]), the Laplace mechanism with word dropout and its effective
//! privacy-budget accountant ([`dp`]), a split feature-extractor/classifier
//! model ([`model`]), standard and noise-robust training ([`train`]), the
//! client-side privatization pipeline and its wire format ([`pipeline`]),
//! attacker probes with empirical-privacy metrics ([`attack`]), subgroup
//! fairness audits ([`fairness`]), and corpus ingestion plus a synthetic
//! corpus generator ([`data`]).

pub mod attack;
pub mod data;
pub mod dp;
pub mod error;
pub mod fairness;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use rng::RngStream;
