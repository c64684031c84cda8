//! Scenario config files: TOML with one table per section and flat keys.
//!
//! ```toml
//! [budget]
//! fluorescence_kcps = 4.8
//! [trial]
//! duration_s = 50.0
//! seed = 7
//! ```
//!
//! Every key is optional and falls back to [`default_scenario`]. Unknown
//! keys are rejected so typos do not silently change a run.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use toml::{Table, Value};

use crate::detection::BayesianConfig;
use crate::error::{Error, Result};
use crate::model::{EmitterParams, RateBudget, Scenario};
use crate::optics::{AreaSpec, DetectorGeometry, EmissionPattern, Layer};
use crate::simulator::DeadTimeModel;

/// Table I budget, 174Yb+ emitter, default geometry, 50 s trials, seed 0.
pub fn default_scenario() -> Scenario {
    Scenario {
        budget: RateBudget::table_one(),
        emitter: EmitterParams::yb174(),
        geometry: DetectorGeometry::reference_default(),
        area: AreaSpec::QuarterDisc,
        trial_duration: 50.0,
        rng_seed: 0,
        dead_time: DeadTimeModel::default(),
        detection: BayesianConfig::default(),
        bias_voltage: 32.0,
    }
}

const KEYS: &[(&str, &[&str])] = &[
    ("budget", &["fluorescence_kcps", "repump_kcps", "doppler_kcps", "dark_kcps", "rf_kcps"]),
    ("emitter", &["gamma_over_2pi_mhz", "saturation_fraction"]),
    ("trial", &["duration_s", "seed"]),
    ("detector", &["dead_time_us", "bias_v"]),
    ("detection", &["target", "sub_bin_us", "max_time_ms", "prior_ion"]),
    (
        "geometry",
        &["ion_height_um", "recess_um", "lateral_offset_um", "aperture_radius_um", "emission", "active_area"],
    ),
    ("stack", &["wavelength_nm", "ambient_index", "substrate_index", "layers"]),
];

/// Finds the line (1-based) defining `section.key`, either under a
/// `[section]` header or as a dotted key.
fn locate(src: &str, section: &str, key: Option<&str>) -> usize {
    let mut current = String::new();
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(h) = line.strip_prefix('[').and_then(|l| l.split(']').next()) {
            current = h.trim().to_string();
            if key.is_none() && current == section {
                return i + 1;
            }
            continue;
        }
        let Some(lhs) = line.split('=').next().map(str::trim) else { continue };
        let dotted = format!("{section}.{}", key.unwrap_or(""));
        let matches = match key {
            Some(k) => (current == section && lhs == k) || lhs == dotted,
            None => lhs.starts_with(&dotted),
        };
        if matches {
            return i + 1;
        }
    }
    0
}

struct Reader<'a> {
    src: &'a str,
    table: &'a Table,
}

impl<'a> Reader<'a> {
    fn err(&self, section: &str, key: &str, message: impl std::fmt::Display) -> Error {
        Error::ConfigAt {
            line: locate(self.src, section, Some(key)),
            message: format!("{section}.{key}: {message}"),
        }
    }

    fn value(&self, section: &str, key: &str) -> Option<&'a Value> {
        self.table.get(section)?.as_table()?.get(key)
    }

    fn number(&self, section: &str, key: &str, v: &Value) -> Result<f64> {
        match v {
            Value::Float(x) if x.is_finite() => Ok(*x),
            Value::Integer(i) => Ok(*i as f64),
            _ => Err(self.err(section, key, format!("expected a finite number, got {v}"))),
        }
    }

    /// Reads a number, applies `scale`, and checks it with `ok`.
    fn scalar(&self, section: &str, key: &str, scale: f64, ok: fn(f64) -> bool, expect: &str) -> Result<Option<f64>> {
        let Some(v) = self.value(section, key) else { return Ok(None) };
        let x = self.number(section, key, v)?;
        if !ok(x) {
            return Err(self.err(section, key, format!("must be {expect}, got {x}")));
        }
        Ok(Some(x * scale))
    }

    fn string(&self, section: &str, key: &str) -> Result<Option<&'a str>> {
        match self.value(section, key) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(v) => Err(self.err(section, key, format!("expected a string, got {v}"))),
        }
    }

    fn complex(&self, section: &str, key: &str, v: &Value) -> Result<Complex64> {
        let parts = match v {
            Value::Array(a) if a.len() == 2 => a,
            Value::Float(_) | Value::Integer(_) => return Ok(Complex64::new(self.number(section, key, v)?, 0.0)),
            _ => return Err(self.err(section, key, "expected n or [n, k]")),
        };
        let n = self.number(section, key, &parts[0])?;
        let k = self.number(section, key, &parts[1])?;
        if n <= 0.0 || k < 0.0 {
            return Err(self.err(section, key, format!("need n > 0 and k >= 0, got [{n}, {k}]")));
        }
        Ok(Complex64::new(n, k))
    }
}

fn check_keys(src: &str, table: &Table) -> Result<()> {
    for (section, value) in table {
        let Some((_, known)) = KEYS.iter().find(|(s, _)| s == section) else {
            return Err(Error::ConfigAt {
                line: locate(src, section, None),
                message: format!("unknown section {section:?}"),
            });
        };
        let Some(inner) = value.as_table() else {
            return Err(Error::ConfigAt {
                line: locate(src, section, None),
                message: format!("{section:?} must be a table"),
            });
        };
        for key in inner.keys() {
            if !known.contains(&key.as_str()) {
                return Err(Error::ConfigAt {
                    line: locate(src, section, Some(key)),
                    message: format!("unknown key {section}.{key}"),
                });
            }
        }
    }
    Ok(())
}

fn nonneg(x: f64) -> bool {
    x >= 0.0
}

fn positive(x: f64) -> bool {
    x > 0.0
}

fn unbounded(_: f64) -> bool {
    true
}

fn fraction(x: f64) -> bool {
    (0.0..1.0).contains(&x)
}

fn open_unit(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

/// Parses a scenario. Relative `file:` area paths resolve against `base`.
pub fn parse_scenario(src: &str, base: Option<&Path>) -> Result<Scenario> {
    let table: Table = src.parse().map_err(|e: toml::de::Error| {
        let line = e.span().map_or(0, |s| src[..s.start.min(src.len())].lines().count().max(1));
        Error::ConfigAt {
            line,
            message: e.message().to_string(),
        }
    })?;
    check_keys(src, &table)?;
    let r = Reader { src, table: &table };
    let mut s = default_scenario();

    let mut rates = s.budget.as_array();
    for (i, key) in KEYS[0].1.iter().enumerate() {
        if let Some(x) = r.scalar("budget", key, 1e3, nonneg, ">= 0")? {
            rates[i] = x;
        }
    }
    s.budget = RateBudget::from_array(rates)?;

    let gamma = r.scalar("emitter", "gamma_over_2pi_mhz", 1e6, positive, "> 0")?;
    let frac = r.scalar("emitter", "saturation_fraction", 1.0, fraction, "in [0, 1)")?;
    s.emitter = EmitterParams::new(
        gamma.unwrap_or(s.emitter.gamma_over_2pi()),
        frac.unwrap_or(s.emitter.saturation_fraction()),
    )?;

    if let Some(x) = r.scalar("trial", "duration_s", 1.0, positive, "> 0")? {
        s.trial_duration = x;
    }
    if let Some(v) = r.value("trial", "seed") {
        s.rng_seed = match v {
            Value::Integer(i) if *i >= 0 => *i as u64,
            Value::String(t) => t.parse().map_err(|_| r.err("trial", "seed", format!("not an unsigned integer: {t:?}")))?,
            _ => return Err(r.err("trial", "seed", format!("expected an unsigned integer, got {v}"))),
        };
    }

    if let Some(x) = r.scalar("detector", "dead_time_us", 1e-6, nonneg, ">= 0")? {
        s.dead_time = DeadTimeModel::new(x)?;
    }
    if let Some(x) = r.scalar("detector", "bias_v", 1.0, unbounded, "a number")? {
        s.bias_voltage = x;
    }

    let d = &mut s.detection;
    if let Some(x) = r.scalar("detection", "target", 1.0, |x| x > 0.5 && x < 1.0, "in (0.5, 1)")? {
        d.target_posterior = x;
    }
    if let Some(x) = r.scalar("detection", "sub_bin_us", 1e-6, positive, "> 0")? {
        d.sub_bin = x;
    }
    if let Some(x) = r.scalar("detection", "max_time_ms", 1e-3, positive, "> 0")? {
        d.max_time = x;
    }
    if let Some(x) = r.scalar("detection", "prior_ion", 1.0, open_unit, "in (0, 1)")? {
        d.prior_ion = x;
    }
    d.validate().map_err(|e| Error::ConfigAt {
        line: locate(src, "detection", None),
        message: e.to_string(),
    })?;

    let g = &mut s.geometry;
    if let Some(x) = r.scalar("geometry", "ion_height_um", 1e-6, unbounded, "a number")? {
        g.ion_height_above_surface = x;
    }
    if let Some(x) = r.scalar("geometry", "recess_um", 1e-6, unbounded, "a number")? {
        g.detector_recess_below_surface = x;
    }
    if let Some(x) = r.scalar("geometry", "lateral_offset_um", 1e-6, unbounded, "a number")? {
        g.ion_lateral_offset = x;
    }
    if let Some(x) = r.scalar("geometry", "aperture_radius_um", 1e-6, positive, "> 0")? {
        g.aperture_radius = x;
    }
    if let Some(label) = r.string("geometry", "emission")? {
        g.emission_pattern = EmissionPattern::from_label(label)
            .ok_or_else(|| r.err("geometry", "emission", format!("expected isotropic or dipole_perpendicular, got {label:?}")))?;
    }
    if let Some(label) = r.string("geometry", "active_area")? {
        s.area = match label {
            "quarter_disc" => AreaSpec::QuarterDisc,
            "aperture_disc" => AreaSpec::ApertureDisc,
            _ => match label.strip_prefix("file:") {
                Some(p) => {
                    let p = PathBuf::from(p);
                    AreaSpec::File(match base {
                        Some(b) if p.is_relative() => b.join(p),
                        _ => p,
                    })
                }
                None => {
                    return Err(r.err(
                        "geometry",
                        "active_area",
                        format!("expected quarter_disc, aperture_disc or file:<path>, got {label:?}"),
                    ))
                }
            },
        };
    }

    let st = &mut g.stack;
    if let Some(x) = r.scalar("stack", "wavelength_nm", 1e-9, positive, "> 0")? {
        st.wavelength = x;
    }
    if let Some(v) = r.value("stack", "ambient_index") {
        st.ambient_index = r.complex("stack", "ambient_index", v)?;
    }
    if let Some(v) = r.value("stack", "substrate_index") {
        st.substrate_index = r.complex("stack", "substrate_index", v)?;
    }
    if let Some(v) = r.value("stack", "layers") {
        let bad = || r.err("stack", "layers", "expected [[thickness_nm, n, k], ...]");
        let rows = v.as_array().ok_or_else(bad)?;
        st.layers = rows
            .iter()
            .map(|row| {
                let row = row.as_array().filter(|a| a.len() == 3).ok_or_else(bad)?;
                let t = r.number("stack", "layers", &row[0])?;
                if t <= 0.0 {
                    return Err(r.err("stack", "layers", format!("layer thickness must be > 0, got {t}")));
                }
                let index = r.complex("stack", "layers", &Value::Array(row[1..].to_vec()))?;
                Ok(Layer {
                    thickness: t * 1e-9,
                    index,
                })
            })
            .collect::<Result<_>>()?;
    }

    s.geometry.active_area = s.area.build(s.geometry.aperture_radius).map_err(|e| Error::ConfigAt {
        line: locate(src, "geometry", Some("active_area")),
        message: format!("geometry.active_area: {e}"),
    })?;
    s.geometry.validate().map_err(|e| Error::ConfigAt {
        line: locate(src, "geometry", None),
        message: e.to_string(),
    })?;
    s.validate()?;
    Ok(s)
}

/// Reads and parses a scenario file.
pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let src = std::fs::read_to_string(path)?;
    parse_scenario(&src, path.parent())
}

/// The float `y` nearest `x / scale` for which `y * scale == x`, so that
/// reading the written value back reproduces `x` exactly when possible.
fn in_unit(x: f64, scale: f64) -> f64 {
    let guess = x / scale;
    let mut lo = guess;
    let mut hi = guess;
    for _ in 0..64 {
        if lo * scale == x {
            return lo;
        }
        if hi * scale == x {
            return hi;
        }
        lo = lo.next_down();
        hi = hi.next_up();
    }
    guess
}

fn num(x: f64, scale: f64) -> String {
    format!("{:?}", in_unit(x, scale))
}

fn complex(z: Complex64) -> String {
    format!("[{:?}, {:?}]", z.re, z.im)
}

/// Writes a scenario in the config format. `parse_scenario` of the output
/// reproduces the scenario.
pub fn write_scenario(s: &Scenario) -> String {
    let mut out = String::new();
    let b = &s.budget;
    let g = &s.geometry;
    let d = &s.detection;
    let st = &g.stack;
    // Writing to a String cannot fail.
    let _ = writeln!(
        out,
        "[budget]\nfluorescence_kcps = {}\nrepump_kcps = {}\ndoppler_kcps = {}\ndark_kcps = {}\nrf_kcps = {}\n",
        num(b.fluorescence, 1e3),
        num(b.repump_scatter, 1e3),
        num(b.doppler_scatter, 1e3),
        num(b.dark_counts, 1e3),
        num(b.rf_pickup, 1e3),
    );
    let _ = writeln!(
        out,
        "[emitter]\ngamma_over_2pi_mhz = {}\nsaturation_fraction = {:?}\n",
        num(s.emitter.gamma_over_2pi(), 1e6),
        s.emitter.saturation_fraction(),
    );
    let seed = if s.rng_seed <= i64::MAX as u64 {
        s.rng_seed.to_string()
    } else {
        format!("\"{}\"", s.rng_seed)
    };
    let _ = writeln!(out, "[trial]\nduration_s = {:?}\nseed = {seed}\n", s.trial_duration);
    let _ = writeln!(
        out,
        "[detector]\ndead_time_us = {}\nbias_v = {:?}\n",
        num(s.dead_time.dead_time, 1e-6),
        s.bias_voltage
    );
    let _ = writeln!(
        out,
        "[detection]\ntarget = {:?}\nsub_bin_us = {}\nmax_time_ms = {}\nprior_ion = {:?}\n",
        d.target_posterior,
        num(d.sub_bin, 1e-6),
        num(d.max_time, 1e-3),
        d.prior_ion
    );
    let area = match &s.area {
        AreaSpec::QuarterDisc => "quarter_disc".to_string(),
        AreaSpec::ApertureDisc => "aperture_disc".to_string(),
        AreaSpec::File(p) => format!("file:{}", p.display()),
    };
    let _ = writeln!(
        out,
        "[geometry]\nion_height_um = {}\nrecess_um = {}\nlateral_offset_um = {}\naperture_radius_um = {}\nemission = \"{}\"\nactive_area = {:?}\n",
        num(g.ion_height_above_surface, 1e-6),
        num(g.detector_recess_below_surface, 1e-6),
        num(g.ion_lateral_offset, 1e-6),
        num(g.aperture_radius, 1e-6),
        g.emission_pattern.label(),
        area,
    );
    let layers: Vec<String> = st
        .layers
        .iter()
        .map(|l| format!("[{}, {:?}, {:?}]", num(l.thickness, 1e-9), l.index.re, l.index.im))
        .collect();
    let _ = writeln!(
        out,
        "[stack]\nwavelength_nm = {}\nambient_index = {}\nsubstrate_index = {}\nlayers = [{}]",
        num(st.wavelength, 1e-9),
        complex(st.ambient_index),
        complex(st.substrate_index),
        layers.join(", "),
    );
    out
}
