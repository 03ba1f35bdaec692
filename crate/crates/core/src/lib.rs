//! Exit times and running maxima of the simple random walk on `Z^N`.
//!
//! Three independent engines answer the same questions:
//!
//! * [`lattice_walk`] simulates the walk (and the coordinate coupling that
//!   bounds it by independent one-dimensional walks) with reproducible,
//!   parallel sampling;
//! * [`exact_oracle`] solves the absorbing chain on the cube `B_r` exactly;
//! * [`limit_laws`] evaluates the Brownian limits of the rescaled exit time
//!   `T̃_{N,r}/r²` and running maximum `M̃_{N,t}/√t`.
//!
//! [`harness`] wires them into convergence sweeps and identity reports.

// `!(x > 0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod exact_oracle;
pub mod harness;
pub mod lattice_walk;
pub mod limit_laws;
pub mod quadrature;
pub mod scalar;
pub mod special;

pub use error::{Error, Result};
pub use scalar::Real;

pub type SeriesConfigF64 = limit_laws::SeriesConfig<f64>;
pub type QuadratureConfigF64 = quadrature::QuadratureConfig<f64>;
pub type LimitLawsF64 = limit_laws::LimitLaws<f64>;
pub type LimitLawsF32 = limit_laws::LimitLaws<f32>;
