//! Semiparametric transition models for count data.
//!
//! A count is modelled through its transitions: the probability that it
//! exceeds `r` given that it reached `r` follows a binary regression with
//! category-specific intercepts, smoothed by a difference penalty. Poisson,
//! negative binomial, zero-inflated and hurdle fits serve as baselines, and
//! proper scoring rules drive smoothing-parameter selection and model
//! comparison.

pub mod baselines;
pub mod basis;
pub mod data;
pub mod error;
pub mod experiments;
pub mod link;
pub mod newton;
pub mod persist;
pub mod pmf;
pub mod scoring;
pub mod special;
pub mod summary;
pub mod transition;

pub use error::{Error, Result};
