//! Thin-film reflectance by the characteristic-matrix (transfer-matrix)
//! method, written in terms of tilted optical admittances.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

use crate::error::{domain, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Polarization {
    S,
    P,
    Unpolarized,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Layer {
    /// Meters.
    pub thickness: f64,
    pub index: Complex64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpticalStack {
    pub ambient_index: Complex64,
    /// Ordered from the ambient side toward the substrate.
    pub layers: Vec<Layer>,
    pub substrate_index: Complex64,
    /// Vacuum wavelength in meters.
    pub wavelength: f64,
}

/// Default indices at 370 nm.
pub const SIO2_INDEX: Complex64 = Complex64::new(1.47, 0.0);
pub const SIN_INDEX: Complex64 = Complex64::new(2.20, 0.0);
pub const SI_INDEX: Complex64 = Complex64::new(6.3, 2.2);
pub const WAVELENGTH_370: f64 = 370e-9;

/// Complex amplitude coefficients and power fractions for one polarization.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StackResponse {
    pub r: Complex64,
    pub reflectance: f64,
    /// Power fraction entering the substrate.
    pub transmittance: f64,
}

impl OpticalStack {
    pub fn new(
        ambient_index: Complex64,
        layers: Vec<Layer>,
        substrate_index: Complex64,
        wavelength: f64,
    ) -> Result<Self> {
        let stack = OpticalStack {
            ambient_index,
            layers,
            substrate_index,
            wavelength,
        };
        stack.validate()?;
        Ok(stack)
    }

    /// 10 nm SiO2 under 29 nm SiN on Si, in vacuum at 370 nm.
    pub fn arc_default() -> Self {
        OpticalStack {
            ambient_index: Complex64::new(1.0, 0.0),
            layers: vec![
                Layer {
                    thickness: 29e-9,
                    index: SIN_INDEX,
                },
                Layer {
                    thickness: 10e-9,
                    index: SIO2_INDEX,
                },
            ],
            substrate_index: SI_INDEX,
            wavelength: WAVELENGTH_370,
        }
    }

    pub fn bare_silicon() -> Self {
        OpticalStack {
            ambient_index: Complex64::new(1.0, 0.0),
            layers: Vec::new(),
            substrate_index: SI_INDEX,
            wavelength: WAVELENGTH_370,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.wavelength.is_finite() && self.wavelength > 0.0) {
            return Err(domain(format!("wavelength must be > 0, got {}", self.wavelength)));
        }
        let indices = std::iter::once(self.ambient_index)
            .chain(self.layers.iter().map(|l| l.index))
            .chain(std::iter::once(self.substrate_index));
        for n in indices {
            if !(n.re.is_finite() && n.im.is_finite() && n.re > 0.0 && n.im >= 0.0) {
                return Err(domain(format!(
                    "refractive index must have Re > 0 and Im >= 0, got {n}"
                )));
            }
        }
        for l in &self.layers {
            if !(l.thickness.is_finite() && l.thickness > 0.0) {
                return Err(domain(format!("layer thickness must be > 0, got {}", l.thickness)));
            }
        }
        Ok(())
    }

    pub fn is_lossless(&self) -> bool {
        self.ambient_index.im == 0.0
            && self.substrate_index.im == 0.0
            && self.layers.iter().all(|l| l.index.im == 0.0)
    }

    /// Full response for a single linear polarization.
    pub fn response(&self, angle: f64, pol: Polarization) -> Result<StackResponse> {
        check_angle(angle)?;
        match pol {
            Polarization::S => Ok(self.solve(angle, true)),
            Polarization::P => Ok(self.solve(angle, false)),
            Polarization::Unpolarized => {
                let s = self.solve(angle, true);
                let p = self.solve(angle, false);
                Ok(StackResponse {
                    r: (s.r + p.r) * 0.5,
                    reflectance: 0.5 * (s.reflectance + p.reflectance),
                    transmittance: 0.5 * (s.transmittance + p.transmittance),
                })
            }
        }
    }

    fn solve(&self, angle: f64, s_pol: bool) -> StackResponse {
        // Tangential wavevector component, conserved through the stack.
        let kx = self.ambient_index * angle.sin();
        let admittance = |n: Complex64| {
            let q = normal_component(n, kx);
            if s_pol {
                q
            } else {
                n * n / q
            }
        };
        let eta0 = admittance(self.ambient_index);
        let eta_sub = admittance(self.substrate_index);

        let k0 = 2.0 * PI / self.wavelength;
        let i = Complex64::i();
        let (mut m11, mut m12, mut m21, mut m22) = (
            Complex64::new(1.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            Complex64::new(1.0, 0.0),
        );
        for layer in &self.layers {
            let q = normal_component(layer.index, kx);
            let eta = admittance(layer.index);
            let delta = q * (k0 * layer.thickness);
            let (c, s) = (delta.cos(), delta.sin());
            let (a11, a12, a21, a22) = (c, i * s / eta, i * eta * s, c);
            (m11, m12, m21, m22) = (
                m11 * a11 + m12 * a21,
                m11 * a12 + m12 * a22,
                m21 * a11 + m22 * a21,
                m21 * a12 + m22 * a22,
            );
        }
        let b = m11 + m12 * eta_sub;
        let c = m21 + m22 * eta_sub;
        let denom = eta0 * b + c;
        let r = (eta0 * b - c) / denom;
        let reflectance = r.norm_sqr().clamp(0.0, 1.0);
        let transmittance = (4.0 * eta0.re * eta_sub.re / denom.norm_sqr()).max(0.0);
        StackResponse {
            r,
            reflectance,
            transmittance,
        }
    }
}

/// n·cosθ inside a medium, on the branch that decays into the medium.
fn normal_component(n: Complex64, kx: Complex64) -> Complex64 {
    let q = (n * n - kx * kx).sqrt();
    if q.im < 0.0 || (q.im == 0.0 && q.re < 0.0) {
        -q
    } else {
        q
    }
}

fn check_angle(angle: f64) -> Result<()> {
    if !(0.0..FRAC_PI_2).contains(&angle) {
        return Err(domain(format!("angle of incidence must lie in [0, pi/2), got {angle}")));
    }
    Ok(())
}

/// |r|² of the stack at `angle` (radians) for the given polarization.
pub fn stack_reflectance(stack: &OpticalStack, angle: f64, pol: Polarization) -> Result<f64> {
    Ok(stack.response(angle, pol)?.reflectance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn fresnel_normal(n1: Complex64, n2: Complex64) -> f64 {
        ((n1 - n2) / (n1 + n2)).norm_sqr()
    }

    #[test]
    fn bare_silicon_matches_fresnel() {
        let stack = OpticalStack::bare_silicon();
        let r = stack_reflectance(&stack, 0.0, Polarization::Unpolarized).unwrap();
        let expected = fresnel_normal(Complex64::new(1.0, 0.0), SI_INDEX);
        assert_relative_eq!(r, expected, max_relative = 1e-12);
        assert!((r - 0.57).abs() <= 0.04, "bare Si R = {r}");
    }

    #[test]
    fn oblique_fresnel_single_interface() {
        // Glass at 40 degrees against the textbook Fresnel formulas.
        let n2 = 1.5f64;
        let stack = OpticalStack::new(
            Complex64::new(1.0, 0.0),
            vec![],
            Complex64::new(n2, 0.0),
            500e-9,
        )
        .unwrap();
        let ti = 40f64.to_radians();
        let tt = (ti.sin() / n2).asin();
        let rs = ((ti.cos() - n2 * tt.cos()) / (ti.cos() + n2 * tt.cos())).powi(2);
        let rp = ((tt.cos() - n2 * ti.cos()) / (tt.cos() + n2 * ti.cos())).powi(2);
        assert_relative_eq!(stack_reflectance(&stack, ti, Polarization::S).unwrap(), rs, max_relative = 1e-12);
        assert_relative_eq!(stack_reflectance(&stack, ti, Polarization::P).unwrap(), rp, max_relative = 1e-12);
    }

    #[test]
    fn quarter_wave_layer_cancels() {
        // n_layer = sqrt(n_sub), quarter-wave thickness -> zero reflectance.
        let lambda = 600e-9;
        let n_sub = 2.25f64;
        let n_l = n_sub.sqrt();
        let stack = OpticalStack::new(
            Complex64::new(1.0, 0.0),
            vec![Layer {
                thickness: lambda / (4.0 * n_l),
                index: Complex64::new(n_l, 0.0),
            }],
            Complex64::new(n_sub, 0.0),
            lambda,
        )
        .unwrap();
        assert!(stack_reflectance(&stack, 0.0, Polarization::S).unwrap() < 1e-20);
    }

    #[test]
    fn arc_normal_incidence_near_ten_percent() {
        let r = stack_reflectance(&OpticalStack::arc_default(), 0.0, Polarization::Unpolarized).unwrap();
        assert!((r - 0.10).abs() <= 0.03, "ARC R = {r}");
    }

    #[test]
    fn arc_reflectance_rises_with_angle() {
        let stack = OpticalStack::arc_default();
        let mut last = 0.0;
        for deg in (0..80).step_by(5) {
            let r = stack_reflectance(&stack, (deg as f64).to_radians(), Polarization::Unpolarized).unwrap();
            assert!(r >= last - 1e-12);
            last = r;
        }
    }

    #[test]
    fn angle_out_of_range_is_domain_error() {
        let stack = OpticalStack::arc_default();
        assert!(stack_reflectance(&stack, FRAC_PI_2, Polarization::S).is_err());
        assert!(stack_reflectance(&stack, -0.1, Polarization::S).is_err());
        assert!(stack_reflectance(&stack, f64::NAN, Polarization::S).is_err());
    }

    #[test]
    fn invalid_stacks_rejected() {
        let bad_thickness = OpticalStack::new(
            Complex64::new(1.0, 0.0),
            vec![Layer { thickness: 0.0, index: SIO2_INDEX }],
            SI_INDEX,
            370e-9,
        );
        assert!(bad_thickness.is_err());
        let gain = OpticalStack::new(Complex64::new(1.0, 0.0), vec![], Complex64::new(3.0, -0.1), 370e-9);
        assert!(gain.is_err());
        assert!(OpticalStack::new(Complex64::new(1.0, 0.0), vec![], SI_INDEX, 0.0).is_err());
    }

    #[test]
    fn s_and_p_coincide_at_normal_incidence() {
        let stack = OpticalStack::arc_default();
        let s = stack_reflectance(&stack, 0.0, Polarization::S).unwrap();
        let p = stack_reflectance(&stack, 0.0, Polarization::P).unwrap();
        assert!((s - p).abs() < 1e-9);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn lossless_stack() -> impl Strategy<Value = OpticalStack> {
            (
                proptest::collection::vec((1e-9f64..500e-9, 1.0f64..4.0), 0..5),
                1.0f64..5.0,
                200e-9f64..1000e-9,
            )
                .prop_map(|(layers, n_sub, lambda)| OpticalStack {
                    ambient_index: Complex64::new(1.0, 0.0),
                    layers: layers
                        .into_iter()
                        .map(|(d, n)| Layer { thickness: d, index: Complex64::new(n, 0.0) })
                        .collect(),
                    substrate_index: Complex64::new(n_sub, 0.0),
                    wavelength: lambda,
                })
        }

        fn absorbing_stack() -> impl Strategy<Value = OpticalStack> {
            (
                proptest::collection::vec((1e-9f64..200e-9, 1.0f64..4.0, 0.0f64..2.0), 0..4),
                (1.0f64..8.0, 0.0f64..4.0),
            )
                .prop_map(|(layers, (n, k))| OpticalStack {
                    ambient_index: Complex64::new(1.0, 0.0),
                    layers: layers
                        .into_iter()
                        .map(|(d, n, k)| Layer { thickness: d, index: Complex64::new(n, k) })
                        .collect(),
                    substrate_index: Complex64::new(n, k),
                    wavelength: 370e-9,
                })
        }

        proptest! {
            #[test]
            fn energy_conserved_for_lossless(stack in lossless_stack(), angle in 0.0f64..1.5) {
                for pol in [Polarization::S, Polarization::P] {
                    let resp = stack.response(angle, pol).unwrap();
                    prop_assert!((resp.reflectance + resp.transmittance - 1.0).abs() < 1e-9,
                        "R + T = {}", resp.reflectance + resp.transmittance);
                }
            }

            #[test]
            fn reflectance_bounded(stack in absorbing_stack(), angle in 0.0f64..1.5) {
                for pol in [Polarization::S, Polarization::P, Polarization::Unpolarized] {
                    let r = stack_reflectance(&stack, angle, pol).unwrap();
                    prop_assert!((0.0..=1.0).contains(&r));
                }
            }

            #[test]
            fn normal_incidence_polarization_independent(stack in absorbing_stack()) {
                let s = stack_reflectance(&stack, 0.0, Polarization::S).unwrap();
                let p = stack_reflectance(&stack, 0.0, Polarization::P).unwrap();
                prop_assert!((s - p).abs() < 1e-9);
            }
        }
    }
}
