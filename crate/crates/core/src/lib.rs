//! Globally optimal trajectories for linear systems with several
//! semi-continuous, cone-constrained inputs, computed through a lossless
//! second-order cone relaxation.
//!
//! The pieces, bottom up:
//!
//! * [`dynamics`]: LTI models, exact ZOH discretization, observability.
//! * [`geometry`]: polytopic pointing cones and projection gains.
//! * [`conic`]: standard-form conic programs and the bundled solver.
//! * [`problem`] / [`transcription`]: problem data and its fixed-`t_f` SOCP.
//! * [`conditions`]: a-priori checks that certify the relaxation is lossless.
//! * [`solver`]: fixed-time and minimum-time solves, primer extraction and
//!   a-posteriori verification.
//! * [`micp`]: a branch-and-bound reference for the mixed-integer problem.

pub mod conditions;
pub mod conic;
pub mod dynamics;
pub mod error;
pub mod geometry;
pub mod micp;
pub mod presets;
pub mod problem;
pub mod solver;
pub mod transcription;

pub use error::{Error, Result};
