// SPDX-License-Identifier: MIT OR Apache-2.0

//! Bayesian segmentation of a series into piecewise-constant means plus a
//! sparse functional part drawn from a dictionary of atoms.
//!
//! The fit has two stages: a Metropolis-Hastings search over inclusion
//! vectors on the collapsed posterior ([`mh`]), then Gibbs estimation of the
//! coefficients and noise variance on the selected model ([`gibbs`]).

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod bench;
pub mod config;
pub mod dictionary;
pub mod error;
pub mod gibbs;
pub mod io;
pub mod linalg;
pub mod mh;
pub mod model;
pub mod pipeline;
pub mod posterior;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Context = posterior::PosteriorContext<f64>;
pub type Context32 = posterior::PosteriorContext<f32>;
pub type Series = model::TimeSeries<f64>;
pub type Hyper = posterior::Hyperparameters<f64>;
pub type Fit = gibbs::FitResult<f64>;
pub type Trace = mh::MhTrace<f64>;
pub type Design = dictionary::DesignMatrix<f64>;
