pub mod aharmonic;
pub mod error;
pub mod harness;
pub mod integrands;
pub mod poly;
pub mod polyfield;
pub mod regularity;
pub mod solver;
pub mod spectral;
pub mod symbol;
pub mod util;

pub use error::{LabError, Result};
