//! Partially observable Poisson GLMs for multi-neuron spike trains, with
//! differentiable relaxations of the hidden spike counts and variational
//! inference driven by score-function or pathwise gradient estimators.
//!
//! Module map:
//!
//! * [`math`]: differentiation tape, seeded RNG streams, special functions.
//! * [`dist`]: the six hidden spike-count distributions.
//! * [`model`]: the generative GLM, its rates, likelihood and simulator.
//! * [`variational`]: the variational sampling schemes.
//! * [`estimators`]: ELBO estimates, gradient estimators, enumeration oracles.
//! * [`train`]: Adam and the mini-batch fitting loop.
//! * [`eval`]: test log-likelihood, parameter recovery, posterior profiles,
//!   and the experiment matrix.
//! * [`io`]: synthetic suites, timestamp binning, file formats.

// Negated comparisons are how NaN is rejected alongside out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dist;
pub mod error;
pub mod estimators;
pub mod eval;
pub mod io;
pub mod math;
pub mod model;
pub mod train;
pub mod variational;

pub use dist::{DistKind, HiddenDist};
pub use error::{Error, Result};
pub use math::{SeededRng, Tape, Var};
pub use model::{BasisKernel, GenerativeParams, HiddenSample, ModelConfig, Nonlinearity, SpikeTrain};
pub use variational::{Scheme, VariationalParams};
