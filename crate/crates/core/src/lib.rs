pub mod assemble;
pub mod banded;
pub mod cutoff;
pub mod diagnostics;
pub mod error;
pub mod error_solver;
pub mod euler;
pub mod fd;
pub mod gmres;
pub mod grid;
pub mod io;
pub mod pipeline;
pub mod prandtl;
pub mod spectral;

pub use error::{Error, Result};
