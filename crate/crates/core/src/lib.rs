//! Geometric phase of a particle in a hard-wall box coupled to a moving,
//! distant flux line: model, source kinematics, adiabatic predictions, a
//! mode-space propagator and the observables that compare them.

// Negated comparisons are used deliberately so NaN fails range checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adiabatic;
pub mod analysis;
pub mod basis;
mod error;
pub mod model;
pub mod propagator;
pub mod quadrature;
pub mod trajectory;

pub use error::{Error, Result};
