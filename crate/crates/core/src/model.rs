//! Source model: two-level scattering, the per-source count budget and the
//! scenario shared by the simulator and the analyses.

use std::f64::consts::PI;
use std::fmt;

use crate::detection::BayesianConfig;
use crate::error::{domain, Result};
use crate::optics::{AreaSpec, DetectorGeometry};
use crate::simulator::DeadTimeModel;

/// Count sources seen by the detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Source {
    Fluorescence,
    Repump,
    Doppler,
    Dark,
    Rf,
}

impl Source {
    pub const ALL: [Source; 5] = [
        Source::Fluorescence,
        Source::Repump,
        Source::Doppler,
        Source::Dark,
        Source::Rf,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Source::Fluorescence => "fluorescence",
            Source::Repump => "repump",
            Source::Doppler => "doppler",
            Source::Dark => "dark",
            Source::Rf => "rf",
        }
    }

    pub fn from_label(s: &str) -> Option<Source> {
        Source::ALL.into_iter().find(|src| src.label() == s)
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Per-source count rates in counts/s.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RateBudget {
    pub fluorescence: f64,
    pub repump_scatter: f64,
    pub doppler_scatter: f64,
    pub dark_counts: f64,
    pub rf_pickup: f64,
}

impl RateBudget {
    pub fn new(
        fluorescence: f64,
        repump_scatter: f64,
        doppler_scatter: f64,
        dark_counts: f64,
        rf_pickup: f64,
    ) -> Result<Self> {
        Self::from_array([
            fluorescence,
            repump_scatter,
            doppler_scatter,
            dark_counts,
            rf_pickup,
        ])
    }

    /// Builds a budget from rates ordered as [`Source::ALL`].
    pub fn from_array(rates: [f64; 5]) -> Result<Self> {
        for (src, r) in Source::ALL.iter().zip(rates) {
            if !(r.is_finite() && r >= 0.0) {
                return Err(domain(format!("{src} rate must be finite and >= 0, got {r}")));
            }
        }
        Ok(RateBudget {
            fluorescence: rates[0],
            repump_scatter: rates[1],
            doppler_scatter: rates[2],
            dark_counts: rates[3],
            rf_pickup: rates[4],
        })
    }

    /// The budget reported for a typical detection run (kcps in the table,
    /// stored here as counts/s).
    pub fn table_one() -> Self {
        RateBudget {
            fluorescence: 4.8e3,
            repump_scatter: 4.0e3,
            doppler_scatter: 1.4e3,
            dark_counts: 1.2e3,
            rf_pickup: 0.3e3,
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [
            self.fluorescence,
            self.repump_scatter,
            self.doppler_scatter,
            self.dark_counts,
            self.rf_pickup,
        ]
    }

    pub fn rate(&self, source: Source) -> f64 {
        self.as_array()[source.index()]
    }

    pub fn ion_total(&self) -> f64 {
        self.as_array().iter().sum()
    }

    pub fn background_total(&self) -> f64 {
        self.repump_scatter + self.doppler_scatter + self.dark_counts + self.rf_pickup
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::from_array(self.as_array().map(|r| r * c))
    }
}

/// Returns `(ion_rate, background_rate)` in counts/s.
pub fn budget_totals(budget: &RateBudget) -> (f64, f64) {
    (budget.ion_total(), budget.background_total())
}

/// Two-level emitter driven at a fixed fraction of saturation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmitterParams {
    /// Natural linewidth as γ/2π in Hz.
    gamma_over_2pi: f64,
    /// s/(1+s).
    saturation_fraction: f64,
}

impl EmitterParams {
    pub fn new(gamma_over_2pi_hz: f64, saturation_fraction: f64) -> Result<Self> {
        if !(gamma_over_2pi_hz.is_finite() && gamma_over_2pi_hz > 0.0) {
            return Err(domain(format!("linewidth must be > 0, got {gamma_over_2pi_hz}")));
        }
        if !(0.0..1.0).contains(&saturation_fraction) {
            return Err(domain(format!(
                "saturation fraction must lie in [0, 1), got {saturation_fraction}"
            )));
        }
        Ok(EmitterParams {
            gamma_over_2pi: gamma_over_2pi_hz,
            saturation_fraction,
        })
    }

    /// 174Yb+ S1/2-P1/2 at the 83% operating point.
    pub fn yb174() -> Self {
        EmitterParams {
            gamma_over_2pi: 19.6e6,
            saturation_fraction: 0.83,
        }
    }

    /// Converts a saturation parameter s = I/I_sat to s/(1+s).
    pub fn from_saturation_parameter(gamma_over_2pi_hz: f64, s: f64) -> Result<Self> {
        if !(s.is_finite() && s >= 0.0) {
            return Err(domain(format!("saturation parameter must be >= 0, got {s}")));
        }
        Self::new(gamma_over_2pi_hz, s / (1.0 + s))
    }

    pub fn gamma_over_2pi(&self) -> f64 {
        self.gamma_over_2pi
    }

    /// Angular linewidth γ in rad/s.
    pub fn gamma(&self) -> f64 {
        2.0 * PI * self.gamma_over_2pi
    }

    pub fn saturation_fraction(&self) -> f64 {
        self.saturation_fraction
    }
}

/// Photon emission rate (photons/s): the saturated rate γ/2 times s/(1+s).
pub fn scattering_rate(emitter: &EmitterParams) -> f64 {
    0.5 * emitter.gamma() * emitter.saturation_fraction
}

/// Everything needed to run a simulated experiment.
///
/// `area` is the declarative source of `geometry.active_area`; both are kept
/// so a scenario can be written back to a config file.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub budget: RateBudget,
    pub emitter: EmitterParams,
    pub geometry: DetectorGeometry,
    pub area: AreaSpec,
    /// Seconds.
    pub trial_duration: f64,
    pub rng_seed: u64,
    pub dead_time: DeadTimeModel,
    pub detection: BayesianConfig,
    /// Detector bias in volts. Carried as metadata only.
    pub bias_voltage: f64,
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.trial_duration.is_finite() && self.trial_duration > 0.0) {
            return Err(domain(format!(
                "trial duration must be > 0, got {}",
                self.trial_duration
            )));
        }
        Ok(())
    }

    /// Rates in counts/s for (ion present, ion absent).
    pub fn hypothesis_rates(&self) -> (f64, f64) {
        budget_totals(&self.budget)
    }

    /// Hypothesis rates after nonparalyzable dead-time loss.
    pub fn observed_rates(&self) -> (f64, f64) {
        let (ion, empty) = self.hypothesis_rates();
        (
            self.dead_time.observed_rate(ion),
            self.dead_time.observed_rate(empty),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn scattering_rate_examples() {
        let off = EmitterParams::new(19.6e6, 0.0).unwrap();
        assert_eq!(scattering_rate(&off), 0.0);

        // γ/2 = π · 19.6 MHz
        let near_sat = EmitterParams::new(19.6e6, 1.0 - 1e-12).unwrap();
        assert_relative_eq!(scattering_rate(&near_sat), 6.157521601035994e7, max_relative = 1e-9);

        let op = EmitterParams::yb174();
        assert_relative_eq!(scattering_rate(&op), 0.83 * PI * 19.6e6, max_relative = 1e-12);
        assert_relative_eq!(scattering_rate(&op), 5.1107e7, max_relative = 1e-4);
    }

    #[test]
    fn emitter_rejects_bad_params() {
        assert!(EmitterParams::new(0.0, 0.5).is_err());
        assert!(EmitterParams::new(19.6e6, 1.0).is_err());
        assert!(EmitterParams::new(19.6e6, -0.1).is_err());
    }

    #[test]
    fn saturation_parameter_helper() {
        let e = EmitterParams::from_saturation_parameter(19.6e6, 1.0).unwrap();
        assert_eq!(e.saturation_fraction(), 0.5);
    }

    #[test]
    fn budget_totals_examples() {
        let (ion, bg) = budget_totals(&RateBudget::table_one());
        assert_relative_eq!(ion, 11.7e3, max_relative = 1e-12);
        assert_relative_eq!(bg, 6.9e3, max_relative = 1e-12);

        assert_eq!(budget_totals(&RateBudget::default()), (0.0, 0.0));

        let fl = RateBudget::new(5e3, 0.0, 0.0, 0.0, 0.0).unwrap();
        assert_eq!(budget_totals(&fl), (5e3, 0.0));
    }

    #[test]
    fn negative_rates_rejected() {
        assert!(RateBudget::new(1.0, -1.0, 0.0, 0.0, 0.0).is_err());
        assert!(RateBudget::new(f64::NAN, 0.0, 0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn source_labels_round_trip() {
        for s in Source::ALL {
            assert_eq!(Source::from_label(s.label()), Some(s));
        }
        assert_eq!(Source::from_label("afterpulse"), None);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn scattering_rate_monotone_and_homogeneous(
                g in 1e5f64..1e9, a in 0.0f64..0.99, b in 0.0f64..0.99, c in 0.1f64..10.0
            ) {
                let (lo, hi) = if a < b { (a, b) } else { (b, a) };
                let r_lo = scattering_rate(&EmitterParams::new(g, lo).unwrap());
                let r_hi = scattering_rate(&EmitterParams::new(g, hi).unwrap());
                prop_assert!(r_lo <= r_hi);
                if hi > lo { prop_assert!(r_lo < r_hi); }
                let scaled = scattering_rate(&EmitterParams::new(c * g, a).unwrap());
                let base = scattering_rate(&EmitterParams::new(g, a).unwrap());
                prop_assert!((scaled - c * base).abs() <= 1e-9 * scaled.abs().max(1.0));
            }

            #[test]
            fn totals_are_linear(r in proptest::array::uniform5(0.0f64..1e5), c in 0.0f64..100.0) {
                let b = RateBudget::from_array(r).unwrap();
                let (ion, bg) = budget_totals(&b);
                let (ion_c, bg_c) = budget_totals(&b.scaled(c).unwrap());
                prop_assert!((ion_c - c * ion).abs() <= 1e-9 * (c * ion).max(1.0));
                prop_assert!((bg_c - c * bg).abs() <= 1e-9 * (c * bg).max(1.0));
                prop_assert!(ion >= bg);
            }
        }
    }
}
