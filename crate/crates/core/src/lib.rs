//! Design-based Bayesian inference for sample-selection models under
//! informative sampling.
//!
//! The crate is organised bottom-up:
//!
//! - [`synthpop`]: seeded synthetic finite populations.
//! - [`design`]: systematic PPS sampling, inclusion probabilities, weights and
//!   joint-inclusion approximations.
//! - [`scorefit`]: Horvitz-Thompson objective, score vector, randomization
//!   covariance and weighted least-squares fits.
//! - [`bayes`]: the Gaussian-score posterior and an adaptive random-walk
//!   Metropolis sampler.
//! - [`infer`]: FBST evidence values, the likelihood-ratio test on the score
//!   likelihood and weight/residual correlation tests.
//! - [`harness`]: the Monte Carlo study driver and its CSV/JSON outputs.

// `!(x > 0.0)` is used on purpose so that NaN takes the rejecting branch.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod bayes;
pub mod design;
pub mod error;
pub mod harness;
pub mod infer;
pub mod linalg;
pub mod optimize;
pub mod rng;
pub mod scorefit;
pub mod synthpop;

pub use basis::Term;
pub use error::{Error, Result};
