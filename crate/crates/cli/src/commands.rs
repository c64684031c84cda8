//! Subcommand implementations.

use std::io::Write;
use std::path::Path;

use spadtrap::config::{default_scenario, load_scenario, write_scenario};
use spadtrap::detection::{
    analytic_threshold_fidelity, fidelity_curve, projected_scenario_fidelity, threshold_fidelity, FidelityCurve,
    ProjectionParams,
};
use spadtrap::estimation::{
    decompose_budget, effective_area, fit_shuttle_dataset, read_toggles, simulate_shuttle_dataset, simulate_toggles,
    synthetic_spot_scan, write_toggles, ShuttleDataset, ShuttleExperiment, SpotScan, ToggleDesign,
};
use spadtrap::model::{RateBudget, Scenario, Source};
use spadtrap::optics::{AreaSpec, OpticalStack, Polarization, QuarterDiscSpad};
use spadtrap::presets::Preset;
use spadtrap::simulator::{gate_and_count, simulate_stream, trial_rng};

use crate::manifest::RunManifest;
use crate::{Command, Common};

const UM: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Numeric(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Input(_) => 2,
            CliError::Numeric(_) => 1,
        }
    }
}

impl From<spadtrap::Error> for CliError {
    fn from(e: spadtrap::Error) -> Self {
        match e {
            spadtrap::Error::Fit(_) => CliError::Numeric(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub struct Outcome {
    pub passed: bool,
}

/// Records one check and prints it.
struct Checks {
    passed: bool,
}

impl Checks {
    fn new() -> Self {
        Checks { passed: true }
    }

    fn check(&mut self, ok: bool, what: impl std::fmt::Display) {
        println!("check {}: {what}", if ok { "ok" } else { "FAILED" });
        self.passed &= ok;
    }

    fn outcome(self) -> Outcome {
        Outcome { passed: self.passed }
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn with_path<T>(path: &Path, r: spadtrap::Result<T>) -> Result<T> {
    r.map_err(|e| CliError::from(e).prefixed(path))
}

impl CliError {
    fn prefixed(self, path: &Path) -> Self {
        match self {
            CliError::Input(m) => CliError::Input(format!("{}: {m}", path.display())),
            CliError::Numeric(m) => CliError::Numeric(format!("{}: {m}", path.display())),
        }
    }
}

fn load(common: &Common) -> Result<(Scenario, String, Option<Preset>)> {
    let (mut scenario, label, preset) = match (&common.config, &common.preset) {
        (Some(path), _) => (with_path(path, load_scenario(path))?, path.display().to_string(), None),
        (None, Some(name)) => {
            let preset = Preset::from_name(name).ok_or_else(|| {
                let names: Vec<&str> = Preset::ALL.iter().map(|p| p.name()).collect();
                CliError::Input(format!("unknown preset {name:?}; expected one of {}", names.join(", ")))
            })?;
            (preset.scenario()?, format!("preset:{name}"), Some(preset))
        }
        (None, None) => (default_scenario(), "default".to_string(), None),
    };
    if let Some(seed) = common.seed {
        scenario.rng_seed = seed;
    }
    Ok((scenario, label, preset))
}

fn linspace(start: f64, stop: f64, step: f64) -> Vec<f64> {
    let n = ((stop - start) / step).round() as usize;
    (0..=n).map(|k| start + k as f64 * step).collect()
}

pub fn run(common: &Common, command: &Command) -> Result<Outcome> {
    let (mut scenario, label, preset) = load(common)?;
    let inputs = match command {
        Command::Spot { scan: Some(p) } => vec![read_input(p)?],
        Command::Budget { toggles: Some(p) } => vec![read_input(p)?],
        Command::Qefit { data: Some(p) } => vec![read_input(p)?],
        _ => Vec::new(),
    };
    if let Command::Simulate { duration: Some(d), .. } = command {
        if !(*d > 0.0 && d.is_finite()) {
            return Err(CliError::Input(format!("--duration must be > 0, got {d}")));
        }
        scenario.trial_duration = *d;
    }
    let args = vec![format!("{command:?}"), format!("check={}", common.check)];
    let manifest = RunManifest::new(
        command.name(),
        &label,
        &write_scenario(&scenario),
        scenario.rng_seed,
        &args,
        &inputs,
        &common.output_dir,
    );
    println!("{}", manifest.header());
    let s = &scenario;
    match command {
        Command::Simulate { no_ion, .. } => simulate(s, &manifest, !no_ion),
        Command::Fidelity { targets, trials } => fidelity(s, &manifest, preset, targets.as_deref(), *trials),
        Command::Threshold { window_ms } => threshold(s, &manifest, window_ms * 1e-3),
        Command::Collection { offsets } => collection(s, &manifest, offsets.as_deref()),
        Command::Arc { angles } => arc(s, &manifest, angles.as_deref()),
        Command::Spot { scan } => spot(s, &manifest, scan.as_deref(), inputs.first()),
        Command::Budget { toggles } => budget(s, &manifest, toggles.as_deref(), inputs.first()),
        Command::Qefit { data } => qefit(s, &manifest, data.as_deref(), inputs.first()),
    }
}

fn simulate(s: &Scenario, m: &RunManifest, ion: bool) -> Result<Outcome> {
    let stream = simulate_stream(s, ion, &s.dead_time);
    let (path, mut w) = m.create("events.csv")?;
    stream.write_csv(&mut w)?;
    w.flush()?;
    println!("wrote {}", path.display());
    println!("events: {} over {} s (ion {})", stream.len(), s.trial_duration, if ion { "present" } else { "absent" });
    let by_source = stream.counts_by_source();
    for src in Source::ALL {
        println!("  {:<13} {}", src.label(), by_source[src.index()]);
    }
    let (l1, l0) = s.observed_rates();
    let expected = if ion { l1 } else { l0 } * s.trial_duration;
    let mut c = Checks::new();
    c.check(
        (stream.len() as f64 - expected).abs() <= 3.0 * expected.sqrt().max(1.0),
        format!("event count {} within 3 sigma of {expected:.0}", stream.len()),
    );
    Ok(c.outcome())
}

fn write_curve(m: &RunManifest, curve: &FidelityCurve) -> Result<()> {
    let (path, mut w) = m.create("fidelity_curve.csv")?;
    curve.write_csv(&mut w)?;
    w.flush()?;
    println!("wrote {}", path.display());
    let (path, mut w) = m.create("window_curve.csv")?;
    curve.write_window_csv(&mut w)?;
    w.flush()?;
    println!("wrote {}", path.display());
    println!("inference rates: ion {:.1} cps, empty {:.1} cps", curve.ion_rate, curve.empty_rate);
    println!("{:>12} {:>10} {:>14} {:>14}", "target", "fidelity", "mean_time_ms", "wald_ms");
    for p in &curve.adaptive {
        let wald = p.wald_mean().map_or("-".to_string(), |w| format!("{:.4}", w * 1e3));
        println!("{:>12} {:>10.5} {:>14.4} {:>14}", p.target, p.fidelity, p.mean_time * 1e3, wald);
    }
    Ok(())
}

fn fidelity(s: &Scenario, m: &RunManifest, preset: Option<Preset>, targets: Option<&[f64]>, trials: usize) -> Result<Outcome> {
    let mut c = Checks::new();
    if preset == Some(Preset::Projection) {
        let mut params = ProjectionParams::reference();
        if let Some(t) = targets {
            params.targets = t.to_vec();
        }
        let report = projected_scenario_fidelity(&params, trials, s.rng_seed)?;
        write_curve(m, &report.curve)?;
        println!(
            "projection: fidelity {:.5} at mean time {:.1} us (signal {:.0} cps)",
            report.fidelity,
            report.mean_time / UM,
            report.budget.fluorescence
        );
        c.check((report.fidelity - 0.9977).abs() <= 0.001, format!("fidelity {:.5} within 0.9977 +/- 0.001", report.fidelity));
        c.check(
            (report.mean_time / 75e-6 - 1.0).abs() <= 0.25,
            format!("mean time {:.1} us within 75 us +/- 25%", report.mean_time / UM),
        );
        return Ok(c.outcome());
    }
    let default_targets = [0.9, 0.95, 0.99, 0.995, 0.999];
    let curve = fidelity_curve(s, targets.unwrap_or(&default_targets), trials)?;
    write_curve(m, &curve)?;
    match curve.point(0.99) {
        Some(p) => {
            c.check((p.fidelity - 0.99).abs() <= 0.005, format!("fidelity {:.4} within 0.99 +/- 0.005", p.fidelity));
            c.check(p.mean_time <= 7.7e-3, format!("mean time {:.3} ms <= 7.7 ms", p.mean_time * 1e3));
            let wald = p.wald_mean().unwrap_or(f64::INFINITY);
            c.check(p.mean_time >= wald, format!("mean time >= Wald bound {:.3} ms", wald * 1e3));
        }
        None => c.check(false, "no 0.99 target in the sweep"),
    }
    Ok(c.outcome())
}

fn threshold(s: &Scenario, m: &RunManifest, window: f64) -> Result<Outcome> {
    if !(window > 0.0) {
        return Err(CliError::Input(format!("window must be > 0, got {window}")));
    }
    let ion = gate_and_count(&simulate_stream(s, true, &s.dead_time), window)?;
    let empty = gate_and_count(&simulate_stream(s, false, &s.dead_time), window)?;
    let result = threshold_fidelity(&ion, &empty, window)?;
    let (l1, l0) = s.observed_rates();
    let (k, exact) = analytic_threshold_fidelity(l1, l0, window)?;
    let (path, mut w) = m.create("histogram.csv")?;
    result.write_histogram_csv(&mut w)?;
    w.flush()?;
    println!("wrote {}", path.display());
    println!(
        "{} windows per class of {} ms: threshold {} (count > threshold is ion), fidelity {:.5}",
        ion.len(),
        window * 1e3,
        result.threshold,
        result.fidelity
    );
    println!("exact Poisson: threshold {k}, fidelity {exact:.5}");
    let mut c = Checks::new();
    c.check(result.fidelity >= 0.996, format!("fidelity {:.5} >= 0.996", result.fidelity));
    c.check(
        (result.fidelity - exact).abs() <= 0.003,
        format!("simulated vs exact within 0.003 ({:+.5})", result.fidelity - exact),
    );
    Ok(c.outcome())
}

fn collection(s: &Scenario, m: &RunManifest, offsets: Option<&[f64]>) -> Result<Outcome> {
    let offsets = offsets.map_or_else(|| linspace(0.0, 80.0, 5.0), <[f64]>::to_vec);
    if offsets.is_empty() {
        return Err(CliError::Input("no offsets given".into()));
    }
    let (path, mut w) = m.create("collection.csv")?;
    writeln!(w, "offset_um,efficiency,geometric_efficiency,shadowed")?;
    println!("{:>10} {:>12} {:>12} shadowed", "offset_um", "CE_%", "no_ARC_%");
    let mut rows = Vec::new();
    for &o in &offsets {
        let r = s.geometry.with_offset(o * UM).collection()?;
        writeln!(w, "{o:?},{:?},{:?},{}", r.efficiency, r.geometric, r.shadowed)?;
        println!("{o:>10} {:>12.5} {:>12.5} {}", r.efficiency * 100.0, r.geometric * 100.0, r.shadowed);
        rows.push((o, r.efficiency));
    }
    w.flush()?;
    println!("wrote {}", path.display());
    let mut c = Checks::new();
    let mut by_distance = rows.clone();
    by_distance.sort_by(|a, b| a.0.abs().total_cmp(&b.0.abs()));
    let monotone = by_distance.windows(2).all(|p| p[0].0.abs() == p[1].0.abs() || p[1].1 < p[0].1);
    c.check(monotone, "efficiency decreases with |offset|");
    if s.area == AreaSpec::QuarterDisc {
        for (o, target) in [(0.0, 0.0014), (80.0, 0.0003)] {
            if let Some(&(_, ce)) = rows.iter().find(|r| r.0 == o) {
                c.check(
                    (ce / target - 1.0).abs() <= 0.3,
                    format!("CE at {o} um {:.4}% within {:.2}% +/- 30%", ce * 100.0, target * 100.0),
                );
            }
        }
    }
    Ok(c.outcome())
}

fn arc(s: &Scenario, m: &RunManifest, angles: Option<&[f64]>) -> Result<Outcome> {
    let angles = angles.map_or_else(|| linspace(0.0, 85.0, 5.0), <[f64]>::to_vec);
    let stack = &s.geometry.stack;
    let (path, mut w) = m.create("arc.csv")?;
    writeln!(w, "angle_deg,r_s,r_p,r_unpolarized,t_unpolarized")?;
    println!("{:>9} {:>8} {:>8} {:>8}", "angle_deg", "R_s", "R_p", "R");
    let mut normal = None;
    for &a in &angles {
        let rad = a.to_radians();
        let rs = stack.response(rad, Polarization::S)?;
        let rp = stack.response(rad, Polarization::P)?;
        let ru = stack.response(rad, Polarization::Unpolarized)?;
        writeln!(w, "{a:?},{:?},{:?},{:?},{:?}", rs.reflectance, rp.reflectance, ru.reflectance, ru.transmittance)?;
        println!("{a:>9} {:>8.4} {:>8.4} {:>8.4}", rs.reflectance, rp.reflectance, ru.reflectance);
        if a == 0.0 {
            normal = Some(ru.reflectance);
        }
    }
    w.flush()?;
    println!("wrote {}", path.display());
    let bare = OpticalStack {
        layers: Vec::new(),
        ..stack.clone()
    }
    .response(0.0, Polarization::Unpolarized)?;
    println!("uncoated substrate at normal incidence: R = {:.4}", bare.reflectance);
    let mut c = Checks::new();
    match normal {
        Some(r) => c.check((r - 0.10).abs() <= 0.03, format!("normal-incidence R {r:.4} within 0.10 +/- 0.03")),
        None => c.check(false, "angle 0 not in the sweep"),
    }
    Ok(c.outcome())
}

fn spot(s: &Scenario, m: &RunManifest, path: Option<&Path>, input: Option<&Vec<u8>>) -> Result<Outcome> {
    let scan = match (path, input) {
        (Some(p), Some(bytes)) => with_path(p, SpotScan::read_csv(&bytes[..]))?,
        _ => {
            let mut rng = trial_rng(s.rng_seed, 0);
            let scan = synthetic_spot_scan(&QuarterDiscSpad::default(), 0.8 * UM, 10e-3, 2e5, 300.0, Some(&mut rng))?;
            let (p, mut w) = m.create("scan.csv")?;
            scan.write_csv(&mut w)?;
            w.flush()?;
            println!("wrote {}", p.display());
            scan
        }
    };
    let (area, map) = effective_area(&scan)?;
    let (p, mut w) = m.create("spot_map.csv")?;
    map.write_csv(&mut w)?;
    w.flush()?;
    println!("wrote {}", p.display());
    let (nx, ny) = map.dims();
    println!(
        "{nx}x{ny} points at {:.0} nm, dwell {} ms, dark {} cps: effective area {:.2} um^2",
        scan.step * 1e9,
        scan.dwell * 1e3,
        scan.dark_rate,
        area * 1e12
    );
    let mut c = Checks::new();
    c.check((area / 60e-12 - 1.0).abs() <= 0.1, format!("area {:.2} um^2 within 60 +/- 10%", area * 1e12));
    Ok(c.outcome())
}

fn budget(s: &Scenario, m: &RunManifest, path: Option<&Path>, input: Option<&Vec<u8>>) -> Result<Outcome> {
    let toggles = match (path, input) {
        (Some(p), Some(bytes)) => with_path(p, read_toggles(&bytes[..]))?,
        _ => {
            let mut rng = trial_rng(s.rng_seed, 0);
            let t = simulate_toggles(&s.budget, ToggleDesign::OneAtATime, 50.0, Some(&mut rng))?;
            let (p, mut w) = m.create("toggles.csv")?;
            write_toggles(&mut w, &t)?;
            w.flush()?;
            println!("wrote {}", p.display());
            t
        }
    };
    let fit = decompose_budget(&toggles)?;
    let (p, mut w) = m.create("budget.csv")?;
    writeln!(w, "source,rate_kcps,stderr_kcps")?;
    println!("{:<13} {:>10} {:>10}", "source", "kcps", "+/-");
    for src in Source::ALL {
        let i = src.index();
        writeln!(w, "{},{:?},{:?}", src.label(), fit.estimates[i] * 1e-3, fit.uncertainties[i] * 1e-3)?;
        println!("{:<13} {:>10.3} {:>10.3}", src.label(), fit.estimates[i] * 1e-3, fit.uncertainties[i] * 1e-3);
    }
    w.flush()?;
    println!("wrote {}", p.display());
    println!(
        "ion total {:.2} kcps, background {:.2} kcps",
        fit.budget.ion_total() * 1e-3,
        fit.budget.background_total() * 1e-3
    );
    let table = RateBudget::table_one().as_array();
    let mut c = Checks::new();
    for src in Source::ALL {
        let i = src.index();
        let tol = (3.0 * fit.uncertainties[i]).max(1e-9 * table[i]);
        c.check(
            (fit.estimates[i] - table[i]).abs() <= tol,
            format!("{} {:.3} kcps matches Table I {:.1} kcps", src.label(), fit.estimates[i] * 1e-3, table[i] * 1e-3),
        );
    }
    Ok(c.outcome())
}

fn qefit(s: &Scenario, m: &RunManifest, path: Option<&Path>, input: Option<&Vec<u8>>) -> Result<Outcome> {
    let data = match (path, input) {
        (Some(p), Some(bytes)) => with_path(p, ShuttleDataset::read_csv(&bytes[..]))?,
        _ => {
            let d = simulate_shuttle_dataset(s, &ShuttleExperiment::reference())?;
            let (p, mut w) = m.create("fig6_data.csv")?;
            d.write_csv(&mut w)?;
            w.flush()?;
            println!("wrote {}", p.display());
            d
        }
    };
    let fit = fit_shuttle_dataset(s, &data)?;
    let (p, mut w) = m.create("qefit.csv")?;
    writeln!(w, "offset_um,measured_kcps,expected_incident_kcps,model_kcps")?;
    for i in 0..data.positions.len() {
        writeln!(
            w,
            "{:?},{:?},{:?},{:?}",
            data.positions[i] / UM,
            data.fluorescence[i] * 1e-3,
            fit.expected[i] * 1e-3,
            fit.qe * fit.expected[i] * 1e-3
        )?;
    }
    w.flush()?;
    println!("wrote {}", p.display());
    println!("quantum efficiency {:.4} +/- {:.4} ({} positions)", fit.qe, fit.std_error, data.positions.len());
    let mut c = Checks::new();
    c.check((fit.qe - 0.24).abs() <= 0.03, format!("QE {:.4} within 0.24 +/- 0.03", fit.qe));
    Ok(c.outcome())
}
