//! Conditional Gaussian random field simulation of geometric part deviations.

pub mod error;
pub mod estimation;
pub mod geometry;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod points;
pub mod simulation;

pub use error::{Error, ErrorKind, Result};
pub use points::Points;
