//! Toolkit for multi-sided exposure experiments on recommender systems.
//!
//! The pipeline is: load ratings ([`dataset`]), optionally rescale them
//! ([`transform`]), produce long ranked lists with a baseline recommender
//! ([`recommend`]), cut them down to final lists with the max-flow
//! re-ranker ([`fairmatch`]) or a trivial comparator ([`rerank`]), and
//! score everything with the exposure and accuracy suite in [`metrics`].
//! [`simulate`] closes the loop by feeding accepted recommendations back
//! into the rating data, and [`experiment`] wires the stages together for
//! the command-line front end.

// Negated comparisons are used on purpose so NaN inputs are rejected.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod dataset;
pub mod error;
pub mod experiment;
pub mod fairmatch;
pub mod metrics;
pub mod recommend;
pub mod rerank;
pub mod seed;
pub mod simulate;
pub mod synthetic;
pub mod transform;

pub use error::{Error, Result};
