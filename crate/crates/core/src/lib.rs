//! Simulation and inference for trapped-ion fluorescence detection with an
//! integrated single-photon avalanche diode.

pub mod config;
pub mod detection;
pub mod error;
pub mod estimation;
mod io;
pub mod model;
pub mod optics;
pub mod presets;
pub mod simulator;

pub use error::{Error, Result};
