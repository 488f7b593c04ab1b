//! Stochastic flow maps ("diamond maps") for reward alignment of flow-matching
//! models, built over Gaussian-mixture data so that every estimator has a
//! closed-form or brute-force oracle to check against.
//!
//! Module map:
//!
//! - [`sched`]: schedulers `(alpha_t, sigma_t)` and the scalar time algebra.
//! - [`mixture`]: Gaussian mixtures and the exact flow-matching oracle.
//! - [`glass`]: the posterior-sampling velocity field and its ODE.
//! - [`maps`]: flow maps, posterior diamond maps and the stochastic kernels built on them.
//! - [`reward`]: rewards and value-function estimators.
//! - [`align`]: guidance, SMC, search and Best-of-N.
//! - [`distill`]: a small trainable diamond map and the flow-map losses.
//! - [`stats`]: distances and tests used to verify all of the above.

// `!(x > 0.0)` is used on purpose so NaN fails validation too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
// Index loops mirror the linear algebra they implement.
#![allow(clippy::needless_range_loop)]

pub mod align;
pub mod distill;
pub mod error;
pub mod glass;
pub mod maps;
pub mod mixture;
pub mod reward;
pub mod rng;
pub mod sched;
pub mod stats;

mod ode;

pub use error::{Error, Result};

/// Largest supported data dimension.
pub const MAX_DIM: usize = 8;

pub type Vector = nalgebra::DVector<f64>;
pub type Matrix = nalgebra::DMatrix<f64>;
