//! Thin-film reflectance of the anti-reflective coating and geometric
//! collection onto a weighted active area below the ion.

mod area;
mod geometry;
mod stack;

pub use area::{ActiveAreaMap, QuarterDiscSpad};
pub use geometry::{
    collection_efficiency, efficiency_vs_offset, AreaSpec, Collection, DetectorGeometry,
    EmissionPattern,
};
pub use stack::{
    stack_reflectance, Layer, OpticalStack, Polarization, StackResponse, SIN_INDEX, SIO2_INDEX,
    SI_INDEX, WAVELENGTH_370,
};
