//! Periodic autoregressive (PAR) models observed under additive noise.
//!
//! The observed series is `Y_t = X_t + Z_t`, where `X_t` follows a periodic
//! autoregression of order `p` and period `T` and `Z_t` is i.i.d. additive
//! noise with finite variance. Residuals of such a model are serially
//! dependent, but grouped into consecutive `T`-blocks they form an i.i.d.
//! sequence of random vectors. The crate builds everything on top of that
//! block structure:
//!
//! * [`model`]: model and noise specifications, simulation.
//! * [`residuals`]: residuals, blocking and the block covariance matrix.
//! * [`charfn`]: characteristic functions of residual blocks, FFT inversion
//!   to density grids and closed-form block densities.
//! * [`estimation`]: errors-in-variables estimation from low- and high-order
//!   periodic Yule-Walker systems.
//! * [`identification`]: BIC-based order and period selection.
//! * [`validation`]: characteristic-function distance goodness-of-fit test
//!   with Monte Carlo p-values.
//!
//! The crate is `no_std` (with `alloc`). Enable the `std` feature to let the
//! numeric dependencies use the standard library (runtime SIMD detection in
//! particular).

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod charfn;
pub mod error;
pub mod estimation;
mod fft;
pub mod identification;
mod linalg;
mod math;
pub mod model;
pub mod residuals;
pub mod rng;
pub mod runner;
pub mod validation;

pub use error::{Error, Result, Warning};
pub use model::{NoiseSpec, ParSpec, SimOptions, Trajectory};
pub use runner::{ReplicationRunner, Sequential};
