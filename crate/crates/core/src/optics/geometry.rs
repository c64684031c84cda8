use std::f64::consts::PI;
use std::path::PathBuf;

use crate::error::{domain, Result};
use crate::optics::area::ActiveAreaMap;
use crate::optics::stack::{OpticalStack, Polarization};

const UM: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmissionPattern {
    Isotropic,
    /// Dipole oriented along the surface normal, normalized to a 4π average of 1.
    DipolePerpendicular,
}

impl EmissionPattern {
    pub fn label(self) -> &'static str {
        match self {
            EmissionPattern::Isotropic => "isotropic",
            EmissionPattern::DipolePerpendicular => "dipole_perpendicular",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "isotropic" => Some(EmissionPattern::Isotropic),
            "dipole_perpendicular" => Some(EmissionPattern::DipolePerpendicular),
            _ => None,
        }
    }

    fn weight(self, cos_theta: f64) -> f64 {
        match self {
            EmissionPattern::Isotropic => 1.0,
            EmissionPattern::DipolePerpendicular => 1.5 * (1.0 - cos_theta * cos_theta),
        }
    }
}

/// Where the active-area map of a scenario comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum AreaSpec {
    /// Reconstructed single quadrant (~60 µm²).
    QuarterDisc,
    /// Uniform response filling the whole optical aperture.
    ApertureDisc,
    /// Grid file in the active-area CSV format.
    File(PathBuf),
}

impl AreaSpec {
    pub fn build(&self, aperture_radius: f64) -> Result<ActiveAreaMap> {
        match self {
            AreaSpec::QuarterDisc => Ok(ActiveAreaMap::default_quarter_disc()),
            AreaSpec::ApertureDisc => ActiveAreaMap::uniform_disc([0.0, 0.0], aperture_radius, 0.5 * UM),
            AreaSpec::File(path) => ActiveAreaMap::load(path),
        }
    }
}

/// Ion above a recessed, weighted active area. Aperture-plane coordinates
/// put the aperture center at the origin; the trap axis is +x.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorGeometry {
    /// Distance along the trap axis from the area's response-weighted centroid.
    pub ion_lateral_offset: f64,
    pub ion_height_above_surface: f64,
    pub detector_recess_below_surface: f64,
    /// Radius of the optical aperture wall, used for the shadowing check.
    pub aperture_radius: f64,
    pub active_area: ActiveAreaMap,
    pub stack: OpticalStack,
    pub emission_pattern: EmissionPattern,
}

/// Collected fraction with and without the ARC transmission factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Collection {
    pub efficiency: f64,
    pub geometric: f64,
    /// Some cell's line of sight crosses the aperture wall.
    pub shadowed: bool,
}

impl DetectorGeometry {
    /// Ion 50 µm above the trap over the 7 µm-recessed quadrant.
    pub fn reference_default() -> Self {
        DetectorGeometry {
            ion_lateral_offset: 0.0,
            ion_height_above_surface: 50.0 * UM,
            detector_recess_below_surface: 7.0 * UM,
            aperture_radius: 19.0 * UM,
            active_area: ActiveAreaMap::default_quarter_disc(),
            stack: OpticalStack::arc_default(),
            emission_pattern: EmissionPattern::Isotropic,
        }
    }

    pub fn vertical_distance(&self) -> f64 {
        self.ion_height_above_surface + self.detector_recess_below_surface
    }

    pub fn with_offset(&self, offset: f64) -> Self {
        DetectorGeometry {
            ion_lateral_offset: offset,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.vertical_distance();
        if !(d.is_finite() && d > 0.0) {
            return Err(domain(format!("ion-to-detector vertical distance must be > 0, got {d}")));
        }
        if !self.ion_lateral_offset.is_finite() {
            return Err(domain("lateral offset must be finite"));
        }
        if self.active_area.effective_area() <= 0.0 {
            return Err(domain("active area has zero effective area"));
        }
        self.stack.validate()
    }

    /// Ion position (x, y, z) with the active-area plane at z = 0.
    pub fn ion_position(&self) -> [f64; 3] {
        let c = self.active_area.centroid();
        [c[0] + self.ion_lateral_offset, c[1], self.vertical_distance()]
    }

    /// Integrates over the map with each cell split into `subdivisions`²
    /// equal-weight sub-cells.
    pub fn collection_refined(&self, subdivisions: usize) -> Result<Collection> {
        self.validate()?;
        let sub = subdivisions.max(1);
        let ion = self.ion_position();
        let h = self.ion_height_above_surface;
        let recess = self.detector_recess_below_surface;
        let cell = self.active_area.cell_size();
        let sub_size = cell / sub as f64;
        let sub_area = sub_size * sub_size;

        let (mut total, mut geometric) = (0.0, 0.0);
        let mut shadowed = false;
        for (cx, cy, w) in self.active_area.cells() {
            for sj in 0..sub {
                for si in 0..sub {
                    let x = cx + ((si as f64 + 0.5) / sub as f64 - 0.5) * cell;
                    let y = cy + ((sj as f64 + 0.5) / sub as f64 - 0.5) * cell;
                    let (dx, dy, dz) = (ion[0] - x, ion[1] - y, ion[2]);
                    let r2 = dx * dx + dy * dy + dz * dz;
                    let cos_t = dz / r2.sqrt();
                    let frac = w * self.emission_pattern.weight(cos_t) * cos_t * sub_area
                        / (4.0 * PI * r2);
                    let refl = self
                        .stack
                        .response(cos_t.clamp(-1.0, 1.0).acos(), Polarization::Unpolarized)?
                        .reflectance;
                    geometric += frac;
                    total += frac * (1.0 - refl);

                    if recess > 0.0 {
                        // Where the ray crosses the trap surface plane.
                        let t = recess / (h + recess);
                        let (px, py) = (x + t * dx, y + t * dy);
                        if px * px + py * py > self.aperture_radius * self.aperture_radius {
                            shadowed = true;
                        }
                    }
                }
            }
        }
        Ok(Collection {
            efficiency: total.clamp(0.0, 1.0),
            geometric: geometric.clamp(0.0, 1.0),
            shadowed,
        })
    }

    pub fn collection(&self) -> Result<Collection> {
        self.collection_refined(1)
    }
}

/// Fraction of emitted photons that reach the active area and pass the ARC.
pub fn collection_efficiency(geometry: &DetectorGeometry) -> Result<f64> {
    Ok(geometry.collection()?.efficiency)
}

/// `collection_efficiency` at each lateral offset, in input order.
pub fn efficiency_vs_offset(geometry: &DetectorGeometry, offsets: &[f64]) -> Result<Vec<(f64, f64)>> {
    use rayon::prelude::*;
    if offsets.is_empty() {
        return Err(domain("offset list is empty"));
    }
    offsets
        .par_iter()
        .map(|&x| Ok((x, collection_efficiency(&geometry.with_offset(x))?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn point_geometry(d: f64, area: f64, weight: f64) -> DetectorGeometry {
        DetectorGeometry {
            ion_lateral_offset: 0.0,
            ion_height_above_surface: d,
            detector_recess_below_surface: 0.0,
            aperture_radius: 19.0 * UM,
            active_area: ActiveAreaMap::point([0.0, 0.0], area, weight).unwrap(),
            stack: OpticalStack::arc_default(),
            emission_pattern: EmissionPattern::Isotropic,
        }
    }

    #[test]
    fn point_area_closed_form() {
        let (d, a, w) = (57.0 * UM, 1.0 * UM * UM, 0.7);
        let g = point_geometry(d, a, w);
        let r0 = g.stack.response(0.0, Polarization::Unpolarized).unwrap().reflectance;
        let expected = w * a * (1.0 - r0) / (4.0 * PI * d * d);
        assert_relative_eq!(collection_efficiency(&g).unwrap(), expected, max_relative = 1e-6);
    }

    #[test]
    fn inverse_square_for_small_area() {
        let a = 1e-2 * UM * UM;
        let e1 = collection_efficiency(&point_geometry(20.0 * UM, a, 1.0)).unwrap();
        let e2 = collection_efficiency(&point_geometry(40.0 * UM, a, 1.0)).unwrap();
        assert_relative_eq!(e1 / e2, 4.0, max_relative = 0.01);
    }

    #[test]
    fn rigid_translation_invariance() {
        let g = DetectorGeometry::reference_default().with_offset(30.0 * UM);
        let moved = DetectorGeometry {
            active_area: g.active_area.translated(13.0 * UM, -4.0 * UM),
            ..g.clone()
        };
        let a = g.collection().unwrap();
        let b = moved.collection().unwrap();
        assert_relative_eq!(a.efficiency, b.efficiency, max_relative = 1e-9);
    }

    #[test]
    fn decreases_with_offset() {
        let g = DetectorGeometry::reference_default();
        let offsets: Vec<f64> = (0..=40).map(|k| k as f64 * 5.0 * UM).collect();
        let curve = efficiency_vs_offset(&g, &offsets).unwrap();
        for pair in curve.windows(2) {
            assert!(pair[1].1 < pair[0].1);
        }
    }

    #[test]
    fn efficiency_vs_offset_preserves_order_and_single_value() {
        let g = DetectorGeometry::reference_default();
        let single = efficiency_vs_offset(&g, &[10.0 * UM]).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].1, collection_efficiency(&g.with_offset(10.0 * UM)).unwrap());
        let descending = efficiency_vs_offset(&g, &[80.0 * UM, 40.0 * UM, 0.0]).unwrap();
        assert_eq!(descending[0].0, 80.0 * UM);
        assert!(descending[0].1 < descending[1].1 && descending[1].1 < descending[2].1);
        assert!(efficiency_vs_offset(&g, &[]).is_err());
    }

    #[test]
    fn grid_refinement_converges() {
        for offset in [0.0, 40.0 * UM, 80.0 * UM] {
            let g = DetectorGeometry::reference_default().with_offset(offset);
            let coarse = g.collection_refined(1).unwrap().efficiency;
            let fine = g.collection_refined(2).unwrap().efficiency;
            assert!(((coarse - fine) / fine).abs() < 0.005);
        }
    }

    #[test]
    fn arc_loss_is_included_and_bounded() {
        let c = DetectorGeometry::reference_default().collection().unwrap();
        assert!(c.efficiency < c.geometric);
        assert!(c.efficiency > 0.85 * c.geometric);
    }

    #[test]
    fn dipole_pattern_suppresses_on_axis_emission() {
        let mut g = DetectorGeometry::reference_default();
        let iso = g.collection().unwrap().efficiency;
        g.emission_pattern = EmissionPattern::DipolePerpendicular;
        let dip = g.collection().unwrap().efficiency;
        assert!(dip < 0.1 * iso);
    }

    #[test]
    fn shadow_flag_raised_far_off_axis() {
        let g = DetectorGeometry::reference_default();
        assert!(!g.collection().unwrap().shadowed);
        assert!(g.with_offset(150.0 * UM).collection().unwrap().shadowed);
    }

    #[test]
    fn non_positive_distance_rejected() {
        let mut g = DetectorGeometry::reference_default();
        g.ion_height_above_surface = -7.0 * UM;
        assert!(collection_efficiency(&g).is_err());
    }
}
