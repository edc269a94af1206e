//! Flexible coordinate descent (FCD) for convex composite problems
//! `min_x f(x) + Ψ(x)` with smooth `f` and coordinate-separable `Ψ`.

pub mod analysis;
pub mod data;
pub mod driver;
pub mod error;
pub mod linalg;
pub mod linesearch;
pub mod model;
pub mod output;
pub mod problem;
pub mod regularizer;
pub mod sampling;
pub mod sparse;
pub mod subsolver;

pub use error::{FcdError, Result};
