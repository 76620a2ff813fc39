//! Thermal tomography: recover a spatially varying diffusivity from boundary
//! temperature measurements using a parametric surrogate of the heat equation.

pub mod cli;
pub mod config;
pub mod error;
pub mod fem;
pub mod inverse;
pub mod io;
pub mod mesh;
pub mod pipeline;
pub mod quadrature;
pub mod sparse;
pub mod spectral;
pub mod splines;
pub mod stepper;
pub mod surrogate;
pub mod verify;

pub use error::{Error, Result};
