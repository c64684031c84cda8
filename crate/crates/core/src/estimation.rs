//! Estimation procedures: spot-test effective area, count-budget
//! decomposition by source toggling, saturation fits and the
//! single-parameter quantum-efficiency fit.
//!
//! Quantum efficiency here is relative to photons that have already passed
//! the ARC: [`collection_efficiency`] includes the coating's transmission.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{domain, Error, Result};
use crate::io::{csv_err, parse_f64, read_grid, reader, write_grid};
use crate::model::{scattering_rate, EmitterParams, RateBudget, Scenario, Source};
use crate::optics::{efficiency_vs_offset, ActiveAreaMap, DetectorGeometry, QuarterDiscSpad};
use crate::simulator::{gate_and_count, simulate_budget, trial_rng, DeadTimeModel};

// ---------------------------------------------------------------------------
// Spot test

/// Raster scan of a focused beam over the detector.
#[derive(Debug, Clone, PartialEq)]
pub struct SpotScan {
    /// Grid pitch in meters.
    pub step: f64,
    /// Raw counts per scan point, `counts[row][column]` with rows along y.
    pub counts: Vec<Vec<f64>>,
    /// Counts/s with the beam off the detector.
    pub dark_rate: f64,
    /// Seconds per scan point.
    pub dwell: f64,
    /// Position of `counts[0][0]` in meters.
    pub origin: [f64; 2],
}

impl SpotScan {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.dwell > 0.0 && self.dark_rate >= 0.0) {
            return Err(domain(format!(
                "need step > 0, dwell > 0 and dark rate >= 0, got {}, {}, {}",
                self.step, self.dwell, self.dark_rate
            )));
        }
        let nx = self.counts.first().map_or(0, Vec::len);
        if nx == 0 || self.counts.iter().any(|r| r.len() != nx) {
            return Err(domain("scan grid must be non-empty and rectangular"));
        }
        if self.counts.iter().flatten().any(|c| !(*c >= 0.0)) {
            return Err(domain("scan counts must be >= 0"));
        }
        Ok(())
    }

    /// Header `step_nm,dwell_ms,dark_kcps,origin_x_um,origin_y_um`, a row of
    /// values, then one row of counts per scan line. The origin columns are
    /// optional on input.
    pub fn read_csv<R: Read>(rdr: R) -> Result<Self> {
        let grid = read_grid(rdr)?;
        let scan = SpotScan {
            step: grid.require("step_nm")? * 1e-9,
            dwell: grid.require("dwell_ms")? * 1e-3,
            dark_rate: grid.require("dark_kcps")? * 1e3,
            origin: [
                grid.header.get("origin_x_um").copied().unwrap_or(0.0) * 1e-6,
                grid.header.get("origin_y_um").copied().unwrap_or(0.0) * 1e-6,
            ],
            counts: grid.rows,
        };
        scan.validate()?;
        Ok(scan)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_grid(
            w,
            &[
                ("step_nm", self.step * 1e9),
                ("dwell_ms", self.dwell * 1e3),
                ("dark_kcps", self.dark_rate * 1e-3),
                ("origin_x_um", self.origin[0] * 1e6),
                ("origin_y_um", self.origin[1] * 1e6),
            ],
            self.counts.iter().cloned(),
        )
    }
}

/// Response-weighted area of a spot scan: each point's dark-subtracted
/// rate, normalized to the brightest point, times the step area.
pub fn effective_area(scan: &SpotScan) -> Result<(f64, ActiveAreaMap)> {
    scan.validate()?;
    let rates: Vec<Vec<f64>> = scan
        .counts
        .iter()
        .map(|row| row.iter().map(|c| (c / scan.dwell - scan.dark_rate).max(0.0)).collect())
        .collect();
    let max = rates.iter().flatten().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(domain("no scan point rises above the dark level"));
    }
    let weights: Vec<Vec<f64>> = rates.iter().map(|r| r.iter().map(|x| x / max).collect()).collect();
    let map = ActiveAreaMap::from_rows(scan.step, scan.origin, &weights)?;
    Ok((map.effective_area(), map))
}

/// Scan of a reconstructed quadrant. Without an RNG the counts are the
/// expected values; with one they are Poisson draws.
pub fn synthetic_spot_scan<R: Rng>(
    spad: &QuarterDiscSpad,
    step: f64,
    dwell: f64,
    peak_rate: f64,
    dark_rate: f64,
    rng: Option<&mut R>,
) -> Result<SpotScan> {
    if !(step > 0.0 && dwell > 0.0 && peak_rate > 0.0 && dark_rate >= 0.0) {
        return Err(domain("need step, dwell and peak rate > 0 and dark rate >= 0"));
    }
    let (origin, n) = spad.scan_window(step);
    let mut rng = rng;
    let mut counts = Vec::with_capacity(n);
    for j in 0..n {
        let mut row = Vec::with_capacity(n);
        for i in 0..n {
            let x = origin[0] + i as f64 * step;
            let y = origin[1] + j as f64 * step;
            let mean = (peak_rate * spad.spot_response(x, y) + dark_rate) * dwell;
            row.push(match rng.as_deref_mut() {
                Some(r) if mean > 0.0 => Poisson::new(mean).map_err(|e| domain(e.to_string()))?.sample(r),
                _ => mean,
            });
        }
        counts.push(row);
    }
    Ok(SpotScan {
        step,
        counts,
        dark_rate,
        dwell,
        origin,
    })
}

// ---------------------------------------------------------------------------
// Count budget

/// Detector rate with a subset of sources switched on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToggleMeasurement {
    /// Indexed by [`Source::index`].
    pub active_sources: [bool; 5],
    /// Counts/s.
    pub measured_rate: f64,
    /// Integration time in seconds, used for the Poisson error.
    pub dwell: f64,
}

impl ToggleMeasurement {
    pub fn validate(&self) -> Result<()> {
        if !(self.measured_rate >= 0.0 && self.measured_rate.is_finite()) {
            return Err(domain(format!("measured rate must be >= 0, got {}", self.measured_rate)));
        }
        if !(self.dwell > 0.0) {
            return Err(domain(format!("dwell must be > 0, got {}", self.dwell)));
        }
        Ok(())
    }
}

const TOGGLE_HEADER: &str = "fluorescence,repump,doppler,dark,rf,rate_kcps,dwell_s";

/// Rows of five 0/1 flags, `rate_kcps` and `dwell_s`. A header row is
/// optional.
pub fn read_toggles<R: Read>(rdr: R) -> Result<Vec<ToggleMeasurement>> {
    let mut out = Vec::new();
    for (i, rec) in reader(rdr).into_records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        if i == 0 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        let row = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != 7 {
            return Err(Error::Csv {
                row,
                column: rec.len().min(7) + 1,
                message: format!("expected 7 fields ({TOGGLE_HEADER}), got {}", rec.len()),
            });
        }
        let mut active = [false; 5];
        for (c, flag) in active.iter_mut().enumerate() {
            *flag = match &rec[c] {
                "1" | "true" | "on" => true,
                "0" | "false" | "off" => false,
                other => {
                    return Err(Error::Csv {
                        row,
                        column: c + 1,
                        message: format!("expected a 0/1 flag, got {other:?}"),
                    })
                }
            };
        }
        let m = ToggleMeasurement {
            active_sources: active,
            measured_rate: parse_f64(&rec, 5)? * 1e3,
            dwell: parse_f64(&rec, 6)?,
        };
        m.validate().map_err(|e| Error::Csv {
            row,
            column: 6,
            message: e.to_string(),
        })?;
        out.push(m);
    }
    Ok(out)
}

pub fn write_toggles<W: Write>(mut w: W, toggles: &[ToggleMeasurement]) -> Result<()> {
    writeln!(w, "{TOGGLE_HEADER}")?;
    for t in toggles {
        let flags: Vec<&str> = t.active_sources.iter().map(|&a| if a { "1" } else { "0" }).collect();
        writeln!(w, "{},{:?},{:?}", flags.join(","), t.measured_rate * 1e-3, t.dwell)?;
    }
    Ok(())
}

/// How the sources are switched on across a toggle series. Dark counts are
/// present in every measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ToggleDesign {
    /// Dark-only baseline, then each other source alone on top of it.
    OneAtATime,
    /// Dark-only baseline, then sources added one at a time.
    Cumulative,
}

impl ToggleDesign {
    pub fn patterns(self) -> Vec<[bool; 5]> {
        let dark = Source::Dark.index();
        let others = [Source::Rf, Source::Doppler, Source::Repump, Source::Fluorescence];
        let mut base = [false; 5];
        base[dark] = true;
        let mut out = vec![base];
        let mut acc = base;
        for s in others {
            match self {
                ToggleDesign::OneAtATime => {
                    let mut p = base;
                    p[s.index()] = true;
                    out.push(p);
                }
                ToggleDesign::Cumulative => {
                    acc[s.index()] = true;
                    out.push(acc);
                }
            }
        }
        out
    }
}

/// Toggle series for a budget. With an RNG each rate is a Poisson count
/// over `dwell` divided by `dwell`.
pub fn simulate_toggles<R: Rng>(
    budget: &RateBudget,
    design: ToggleDesign,
    dwell: f64,
    rng: Option<&mut R>,
) -> Result<Vec<ToggleMeasurement>> {
    if !(dwell > 0.0) {
        return Err(domain(format!("dwell must be > 0, got {dwell}")));
    }
    let rates = budget.as_array();
    let mut rng = rng;
    design
        .patterns()
        .into_iter()
        .map(|active| {
            let rate: f64 = (0..5).filter(|&i| active[i]).map(|i| rates[i]).sum();
            let measured = match rng.as_deref_mut() {
                Some(r) if rate > 0.0 => {
                    let n: f64 = Poisson::new(rate * dwell).map_err(|e| domain(e.to_string()))?.sample(r);
                    n / dwell
                }
                _ => rate,
            };
            Ok(ToggleMeasurement {
                active_sources: active,
                measured_rate: measured,
                dwell,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BudgetFit {
    /// Least-squares estimates clamped at zero.
    pub budget: RateBudget,
    /// Unclamped estimates in counts/s.
    pub estimates: [f64; 5],
    /// One-sigma Poisson errors in counts/s.
    pub uncertainties: [f64; 5],
}

fn describe_combination(v: &[f64]) -> String {
    let scale = v.iter().cloned().fold(0.0f64, |m, x| m.max(x.abs()));
    let terms: Vec<String> = Source::ALL
        .iter()
        .zip(v)
        .filter(|(_, c)| c.abs() > 1e-6 * scale)
        .map(|(s, c)| format!("{:+.3}·{}", c / scale, s.label()))
        .collect();
    terms.join(" ")
}

/// Least-squares solve of measured rate = toggle matrix · source rates.
/// Errors propagate each measurement's Poisson variance `rate/dwell`.
pub fn decompose_budget(measurements: &[ToggleMeasurement]) -> Result<BudgetFit> {
    for m in measurements {
        m.validate()?;
    }
    let rows = measurements.len().max(5);
    let mut a = DMatrix::<f64>::zeros(rows, 5);
    let mut b = DVector::<f64>::zeros(rows);
    for (i, m) in measurements.iter().enumerate() {
        for j in 0..5 {
            a[(i, j)] = if m.active_sources[j] { 1.0 } else { 0.0 };
        }
        b[i] = m.measured_rate;
    }
    let svd = a.clone().svd(true, true);
    let sv = &svd.singular_values;
    let max_sv = sv.max();
    let (min_idx, min_sv) = sv.argmin();
    if max_sv == 0.0 || min_sv <= 1e-10 * max_sv {
        let v_t = svd.v_t.as_ref().expect("requested V^T");
        let null: Vec<f64> = v_t.row(min_idx).iter().cloned().collect();
        return Err(Error::RankDeficient {
            combination: describe_combination(&null),
        });
    }
    let x = svd.solve(&b, 0.0).map_err(|e| domain(e.to_string()))?;

    // Sandwich covariance: (AᵀA)⁻¹ Aᵀ diag(σ²) A (AᵀA)⁻¹.
    let ata_inv = (a.transpose() * &a)
        .try_inverse()
        .ok_or_else(|| Error::RankDeficient {
            combination: "normal equations are singular".into(),
        })?;
    let pinv = &ata_inv * a.transpose();
    let mut var = [0.0; 5];
    for (i, m) in measurements.iter().enumerate() {
        let s2 = m.measured_rate / m.dwell;
        for (j, v) in var.iter_mut().enumerate() {
            *v += pinv[(j, i)] * pinv[(j, i)] * s2;
        }
    }
    let estimates: [f64; 5] = std::array::from_fn(|j| x[j]);
    Ok(BudgetFit {
        budget: RateBudget::from_array(estimates.map(|e| e.max(0.0)))?,
        estimates,
        uncertainties: var.map(f64::sqrt),
    })
}

// ---------------------------------------------------------------------------
// Saturation

#[derive(Debug, Clone, PartialEq)]
pub struct SaturationFit {
    /// Watts.
    pub saturation_power: f64,
    /// Counts/s.
    pub max_rate: f64,
    /// s/(1+s) at each input power.
    pub fractions: Vec<f64>,
    pub iterations: usize,
}

fn saturation_model(p: f64, psat: f64, max: f64) -> f64 {
    let x = p / psat;
    max * x / (1.0 + x)
}

/// Lineweaver-Burk: 1/rate is linear in 1/P with intercept 1/max and slope
/// Psat/max.
fn initial_guess(powers: &[f64], rates: &[f64]) -> Option<(f64, f64)> {
    let pts: Vec<(f64, f64)> = powers
        .iter()
        .zip(rates)
        .filter(|(_, r)| **r > 0.0)
        .map(|(p, r)| (1.0 / p, 1.0 / r))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    (slope > 0.0 && intercept > 0.0).then(|| (slope / intercept, 1.0 / intercept))
}

/// Least-squares fit of rate = max·(P/Psat)/(1 + P/Psat) by
/// Levenberg-Marquardt in log-parameters.
pub fn fit_saturation(powers: &[f64], rates: &[f64]) -> Result<SaturationFit> {
    if powers.len() != rates.len() {
        return Err(domain("powers and rates differ in length"));
    }
    if powers.iter().any(|p| !(*p > 0.0 && p.is_finite())) || rates.iter().any(|r| !r.is_finite()) {
        return Err(domain("powers must be > 0 and rates finite"));
    }
    let mut distinct = powers.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(domain("need at least three distinct powers"));
    }
    let (p_min, p_max) = (distinct[0], distinct[distinct.len() - 1]);
    let r_max = rates.iter().cloned().fold(0.0, f64::max);
    if r_max <= 0.0 {
        return Err(Error::Fit("no positive rates".into()));
    }
    let (psat0, max0) = initial_guess(powers, rates).unwrap_or((distinct[distinct.len() / 2], 1.5 * r_max));

    let sse = |a: f64, b: f64| -> f64 {
        powers
            .iter()
            .zip(rates)
            .map(|(p, r)| (saturation_model(*p, a.exp(), b.exp()) - r).powi(2))
            .sum()
    };
    let (mut a, mut b) = (psat0.ln(), max0.ln());
    let mut cost = sse(a, b);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < 1000 {
        iterations += 1;
        let (mut j11, mut j12, mut j22, mut g1, mut g2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let (psat, max) = (a.exp(), b.exp());
        for (p, r) in powers.iter().zip(rates) {
            let x = p / psat;
            let f = max * x / (1.0 + x);
            let da = -max * x / ((1.0 + x) * (1.0 + x));
            let db = f;
            let res = f - r;
            j11 += da * da;
            j12 += da * db;
            j22 += db * db;
            g1 += da * res;
            g2 += db * res;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let (m11, m22) = (j11 * (1.0 + lambda), j22 * (1.0 + lambda));
            let det = m11 * m22 - j12 * j12;
            if det > 0.0 {
                let da = -(m22 * g1 - j12 * g2) / det;
                let db = -(m11 * g2 - j12 * g1) / det;
                let trial = sse(a + da, b + db);
                if trial <= cost {
                    let step = da.abs().max(db.abs());
                    a += da;
                    b += db;
                    let rel = (cost - trial) / cost.max(f64::MIN_POSITIVE);
                    cost = trial;
                    lambda = (lambda / 10.0).max(1e-15);
                    improved = true;
                    if step < 1e-13 || rel < 1e-15 || cost == 0.0 {
                        converged = true;
                    }
                    break;
                }
            }
            lambda *= 10.0;
        }
        if !improved {
            converged = true;
        }
        if converged {
            break;
        }
    }
    let (psat, max) = (a.exp(), b.exp());
    if !converged || !(psat > 1e-3 * p_min && psat < 1e3 * p_max) {
        return Err(Error::Fit(format!(
            "saturation power is not constrained by the data (ended at {psat:e} W after {iterations} iterations)"
        )));
    }
    Ok(SaturationFit {
        saturation_power: psat,
        max_rate: max,
        fractions: powers.iter().map(|p| p / (p + psat)).collect(),
        iterations,
    })
}

// ---------------------------------------------------------------------------
// Quantum efficiency

#[derive(Debug, Clone, PartialEq)]
pub struct QEFitInput {
    /// Lateral offsets in meters.
    pub positions: Vec<f64>,
    /// Background-subtracted fluorescence in counts/s.
    pub measured_fluorescence: Vec<f64>,
    pub geometry: DetectorGeometry,
    pub emitter: EmitterParams,
}

impl QEFitInput {
    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() || self.positions.len() != self.measured_fluorescence.len() {
            return Err(domain("positions and rates must have the same nonzero length"));
        }
        if self.measured_fluorescence.iter().any(|m| !(*m >= 0.0 && m.is_finite())) {
            return Err(domain("measured rates must be >= 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QEFit {
    pub qe: f64,
    /// From the residual variance; NaN with a single position.
    pub std_error: f64,
    /// Photons/s reaching the active area at each position.
    pub expected: Vec<f64>,
}

/// Expected incident photon rate at each offset.
pub fn expected_incident(geometry: &DetectorGeometry, emitter: &EmitterParams, positions: &[f64]) -> Result<Vec<f64>> {
    let emitted = scattering_rate(emitter);
    Ok(efficiency_vs_offset(geometry, positions)?
        .into_iter()
        .map(|(_, ce)| emitted * ce)
        .collect())
}

/// Scalar least squares of measured = qe · expected.
pub fn fit_quantum_efficiency(input: &QEFitInput) -> Result<QEFit> {
    input.validate()?;
    let expected = expected_incident(&input.geometry, &input.emitter, &input.positions)?;
    if expected.iter().any(|e| *e <= 0.0) {
        return Err(domain("expected incident rate is zero at some position"));
    }
    Ok(qe_from_expected(&input.measured_fluorescence, expected))
}

fn qe_from_expected(measured: &[f64], expected: Vec<f64>) -> QEFit {
    let see: f64 = expected.iter().map(|e| e * e).sum();
    let sme: f64 = measured.iter().zip(&expected).map(|(m, e)| m * e).sum();
    let qe = sme / see;
    let n = measured.len();
    let std_error = if n > 1 {
        let rss: f64 = measured.iter().zip(&expected).map(|(m, e)| (m - qe * e).powi(2)).sum();
        (rss / (n - 1) as f64 / see).sqrt()
    } else {
        f64::NAN
    };
    QEFit { qe, std_error, expected }
}

/// Background-subtracted fluorescence versus ion offset.
#[derive(Debug, Clone, PartialEq)]
pub struct ShuttleDataset {
    /// Meters.
    pub positions: Vec<f64>,
    /// Counts/s.
    pub fluorescence: Vec<f64>,
    /// One-sigma errors in counts/s.
    pub std_errors: Vec<f64>,
}

impl ShuttleDataset {
    /// `offset_um,fluorescence_kcps,stderr_kcps`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "offset_um,fluorescence_kcps,stderr_kcps")?;
        for i in 0..self.positions.len() {
            writeln!(
                w,
                "{:?},{:?},{:?}",
                self.positions[i] * 1e6,
                self.fluorescence[i] * 1e-3,
                self.std_errors[i] * 1e-3
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(rdr: R) -> Result<Self> {
        let mut out = ShuttleDataset {
            positions: Vec::new(),
            fluorescence: Vec::new(),
            std_errors: Vec::new(),
        };
        for (i, rec) in reader(rdr).into_records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            if i == 0 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
                continue;
            }
            out.positions.push(parse_f64(&rec, 0)? * 1e-6);
            out.fluorescence.push(parse_f64(&rec, 1)? * 1e3);
            out.std_errors.push(if rec.len() > 2 { parse_f64(&rec, 2)? * 1e3 } else { 0.0 });
        }
        if out.positions.is_empty() {
            return Err(Error::Csv {
                row: 1,
                column: 0,
                message: "no data rows".into(),
            });
        }
        Ok(out)
    }
}

/// Shuttling experiment settings for the synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct ShuttleExperiment {
    pub positions: Vec<f64>,
    pub quantum_efficiency: f64,
    /// Per-position stream length with and without the ion, seconds.
    pub duration: f64,
    pub gate: f64,
}

impl ShuttleExperiment {
    /// 68 µm to 98 µm in 5 µm steps, 50 s streams, 30 ms gates, QE 0.24.
    pub fn reference() -> Self {
        ShuttleExperiment {
            positions: (0..7).map(|k| (68.0 + 5.0 * k as f64) * 1e-6).collect(),
            quantum_efficiency: 0.24,
            duration: 50.0,
            gate: 30e-3,
        }
    }
}

/// Simulates ion and no-ion streams at each offset with the scenario's
/// backgrounds and dead time, gates them, and returns the dead-time-
/// corrected, background-subtracted fluorescence.
pub fn simulate_shuttle_dataset(scenario: &Scenario, exp: &ShuttleExperiment) -> Result<ShuttleDataset> {
    if !(exp.quantum_efficiency >= 0.0) || exp.positions.is_empty() {
        return Err(domain("need positions and qe >= 0"));
    }
    let expected = expected_incident(&scenario.geometry, &scenario.emitter, &exp.positions)?;
    let dead: &DeadTimeModel = &scenario.dead_time;
    let tau = dead.dead_time;
    let mut out = ShuttleDataset {
        positions: exp.positions.clone(),
        fluorescence: Vec::new(),
        std_errors: Vec::new(),
    };
    for (i, e) in expected.iter().enumerate() {
        let budget = RateBudget {
            fluorescence: exp.quantum_efficiency * e,
            ..scenario.budget
        };
        let mut stats = [(0.0, 0.0); 2];
        for (h, ion) in [true, false].into_iter().enumerate() {
            let mut rng = trial_rng(scenario.rng_seed, 2 * i as u64 + ion as u64);
            let stream = simulate_budget(&budget, exp.duration, ion, dead, &mut rng);
            let counts = gate_and_count(&stream, exp.gate)?;
            let n = counts.len() as f64;
            let mean = counts.iter().sum::<u64>() as f64 / n;
            let var = counts.iter().map(|&c| (c as f64 - mean).powi(2)).sum::<f64>() / (n - 1.0);
            let observed = mean / exp.gate;
            let gain = 1.0 / (1.0 - observed * tau).powi(2);
            stats[h] = (observed / (1.0 - observed * tau), gain * gain * var / n / (exp.gate * exp.gate));
        }
        out.fluorescence.push(stats[0].0 - stats[1].0);
        out.std_errors.push((stats[0].1 + stats[1].1).sqrt());
    }
    Ok(out)
}

/// QE fit to a shuttling dataset with the scenario's geometry and emitter.
/// Negative background-subtracted points are clamped to zero.
pub fn fit_shuttle_dataset(scenario: &Scenario, data: &ShuttleDataset) -> Result<QEFit> {
    fit_quantum_efficiency(&QEFitInput {
        positions: data.positions.clone(),
        measured_fluorescence: data.fluorescence.iter().map(|f| f.max(0.0)).collect(),
        geometry: scenario.geometry.clone(),
        emitter: scenario.emitter,
    })
}
