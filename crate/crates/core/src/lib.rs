//! Conditional regularized halfspace depth for sparse functional data.

pub mod conditioning;
pub mod depth;
pub mod dgp;
pub mod directions;
pub mod error;
pub mod harness;
pub mod inference;
pub mod io;
pub mod numerics;
pub mod smoothing;

pub use error::{Error, Result};

/// Evaluation grid in double precision.
pub type Grid = numerics::Grid<f64>;
/// Curve sampled on a [`Grid`] in double precision.
pub type DenseCurve = numerics::DenseCurve<f64>;
