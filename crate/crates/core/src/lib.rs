//! Numerical toolkit for bubbling blow-up of the nematic liquid crystal flow
//! in the half plane with partially free boundary conditions.

pub mod cli;
pub mod config;
pub mod correction;
pub mod error;
pub mod grid;
pub mod halfspace_sim;
pub mod modulation;
pub mod profiles;
pub mod quad;
pub mod spectral;
pub mod stokes;
pub mod symmetry;
pub mod vec3;

pub use error::{Error, Result};
