//! Solver suite for the reduced ODE systems of conformally compact Einstein
//! metrics with homogeneous spherical conformal infinity.

pub mod error;
pub mod continuation;
pub mod geometry;
pub mod io;
pub mod scalar;
pub mod series;
pub mod solver;
pub mod systems;
pub mod verification;

pub use error::{CceError, Result};
