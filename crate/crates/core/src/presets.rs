//! Bundled scenarios for each reproduced figure and table.

use std::fmt;

use crate::config::default_scenario;
use crate::detection::ProjectionParams;
use crate::error::Result;
use crate::model::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// Spot scan of the reconstructed quadrant at 800 nm pitch.
    Fig3,
    /// Threshold histogram: Table I rates, 25 ms windows over 50 s.
    Fig5a,
    /// Adaptive Bayesian fidelity versus mean detection time.
    Fig5b,
    /// Collection efficiency while shuttling the ion past the detector.
    Fig6,
    /// Count budget recovered from source toggling.
    Table1,
    /// Improved device: 5% collection, 100 cps dark counts, no scatter.
    Projection,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Fig3,
        Preset::Fig5a,
        Preset::Fig5b,
        Preset::Fig6,
        Preset::Table1,
        Preset::Projection,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig3 => "fig3",
            Preset::Fig5a => "fig5a",
            Preset::Fig5b => "fig5b",
            Preset::Fig6 => "fig6",
            Preset::Table1 => "table1",
            Preset::Projection => "projection",
        }
    }

    pub fn from_name(name: &str) -> Option<Preset> {
        Preset::ALL.into_iter().find(|p| p.name() == name)
    }

    pub fn description(self) -> &'static str {
        match self {
            Preset::Fig3 => "spot scan of the reconstructed quadrant, 800 nm steps",
            Preset::Fig5a => "threshold histogram, Table I rates, 25 ms windows over 50 s",
            Preset::Fig5b => "adaptive Bayesian fidelity vs mean detection time, Table I rates",
            Preset::Fig6 => "collection efficiency and QE fit over 68-98 um ion offsets",
            Preset::Table1 => "count budget from source toggling",
            Preset::Projection => "5% collection, 100 cps dark counts, no scatter, 24% QE",
        }
    }

    pub fn scenario(self) -> Result<Scenario> {
        match self {
            Preset::Projection => ProjectionParams::reference().scenario(0),
            _ => Ok(default_scenario()),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}
