//! Ion/no-ion discrimination: fixed-window thresholding on count histograms
//! and sequential Bayesian detection with a variable gate.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{domain, Result};
use crate::model::{scattering_rate, EmitterParams, RateBudget, Scenario};
use crate::simulator::{simulate_budget, trial_rng, DeadTimeModel, EventStream, NS_PER_S};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    Ion,
    NoIon,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Ion,
    NoIon,
    Undecided,
}

// ---------------------------------------------------------------------------
// Fixed-window thresholding

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdResult {
    /// Windows with count > threshold are classified as ion.
    pub threshold: u64,
    pub fidelity: f64,
    pub window: f64,
    /// `histogram_ion[c]` is the number of ion windows with `c` counts.
    pub histogram_ion: Vec<u64>,
    pub histogram_empty: Vec<u64>,
}

impl ThresholdResult {
    /// `count,freq_ion,freq_empty` with frequencies normalized per class.
    pub fn write_histogram_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n_ion: u64 = self.histogram_ion.iter().sum();
        let n_empty: u64 = self.histogram_empty.iter().sum();
        writeln!(w, "count,freq_ion,freq_empty")?;
        for c in 0..self.histogram_ion.len() {
            writeln!(
                w,
                "{c},{:?},{:?}",
                self.histogram_ion[c] as f64 / n_ion as f64,
                self.histogram_empty[c] as f64 / n_empty as f64
            )?;
        }
        Ok(())
    }
}

fn histogram(counts: &[u64], len: usize) -> Vec<u64> {
    let mut h = vec![0u64; len];
    for &c in counts {
        h[c as usize] += 1;
    }
    h
}

/// Picks the count threshold maximizing equal-prior fidelity on two
/// samples of per-window counts. Ties go to the smaller threshold.
pub fn threshold_fidelity(ion_counts: &[u64], empty_counts: &[u64], window: f64) -> Result<ThresholdResult> {
    if ion_counts.is_empty() || empty_counts.is_empty() {
        return Err(domain("threshold analysis needs non-empty count lists"));
    }
    let max = ion_counts.iter().chain(empty_counts).copied().max().unwrap_or(0) as usize;
    let h_ion = histogram(ion_counts, max + 1);
    let h_empty = histogram(empty_counts, max + 1);
    let n_ion = ion_counts.len() as u128;
    let n_empty = empty_counts.len() as u128;

    // Errors are compared as exact integers: misses·n_empty + false_alarms·n_ion.
    let mut misses = 0u128;
    let mut false_alarms = n_empty;
    let mut best: Option<(u128, u64)> = None;
    for k in 0..=max {
        misses += h_ion[k] as u128;
        false_alarms -= h_empty[k] as u128;
        let err = misses * n_empty + false_alarms * n_ion;
        if best.is_none_or(|(e, _)| err < e) {
            best = Some((err, k as u64));
        }
    }
    let (err, threshold) = best.expect("at least one threshold scanned");
    let fidelity = 1.0 - err as f64 / (2.0 * (n_ion * n_empty) as f64);
    Ok(ThresholdResult {
        threshold,
        fidelity,
        window,
        histogram_ion: h_ion,
        histogram_empty: h_empty,
    })
}

/// Poisson CDF values for k = 0..=kmax by log-space pmf recursion.
fn poisson_cdf_table(mean: f64, kmax: usize) -> Vec<f64> {
    let mut cdf = Vec::with_capacity(kmax + 1);
    if mean == 0.0 {
        cdf.resize(kmax + 1, 1.0);
        return cdf;
    }
    let ln_mean = mean.ln();
    let mut ln_p = -mean;
    let mut acc = 0.0;
    for k in 0..=kmax {
        if k > 0 {
            ln_p += ln_mean - (k as f64).ln();
        }
        acc += ln_p.exp();
        cdf.push(acc.min(1.0));
    }
    cdf
}

/// Exact-Poisson optimal threshold and fidelity for a window of `window` s.
pub fn analytic_threshold_fidelity(ion_rate: f64, empty_rate: f64, window: f64) -> Result<(u64, f64)> {
    if !(empty_rate >= 0.0 && ion_rate >= empty_rate && ion_rate.is_finite()) {
        return Err(domain(format!(
            "need ion_rate >= empty_rate >= 0, got {ion_rate} and {empty_rate}"
        )));
    }
    if !(window > 0.0 && window.is_finite()) {
        return Err(domain(format!("window must be > 0, got {window}")));
    }
    let (mu1, mu0) = (ion_rate * window, empty_rate * window);
    let kmax = (mu1 + 12.0 * mu1.sqrt() + 12.0).ceil() as usize;
    let cdf1 = poisson_cdf_table(mu1, kmax);
    let cdf0 = poisson_cdf_table(mu0, kmax);
    let mut best = (0u64, f64::NEG_INFINITY);
    for k in 0..=kmax {
        let f = 0.5 + 0.5 * (cdf0[k] - cdf1[k]);
        if f > best.1 {
            best = (k as u64, f);
        }
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Sequential Bayesian detection

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BayesianConfig {
    pub target_posterior: f64,
    /// Seconds.
    pub sub_bin: f64,
    /// Seconds.
    pub max_time: f64,
    pub prior_ion: f64,
}

impl Default for BayesianConfig {
    fn default() -> Self {
        BayesianConfig {
            target_posterior: 0.99,
            sub_bin: 100e-6,
            max_time: 50e-3,
            prior_ion: 0.5,
        }
    }
}

impl BayesianConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.target_posterior > 0.5 && self.target_posterior < 1.0) {
            return Err(domain(format!(
                "target posterior must lie in (0.5, 1), got {}",
                self.target_posterior
            )));
        }
        if !(self.sub_bin > 0.0 && self.sub_bin <= self.max_time && self.max_time.is_finite()) {
            return Err(domain(format!(
                "need 0 < sub_bin <= max_time, got {} and {}",
                self.sub_bin, self.max_time
            )));
        }
        if !(self.prior_ion > 0.0 && self.prior_ion < 1.0) {
            return Err(domain(format!("prior must lie in (0, 1), got {}", self.prior_ion)));
        }
        Ok(())
    }

    pub fn with_target(&self, target: f64) -> Self {
        BayesianConfig {
            target_posterior: target,
            ..*self
        }
    }

    fn max_bins(&self) -> usize {
        (self.max_time / self.sub_bin + 1e-9).floor() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutcome {
    pub decision: Decision,
    /// Maximum a posteriori hypothesis at stopping; ties go to no-ion.
    pub map_decision: Hypothesis,
    pub stopping_time: f64,
    /// Number of sub-bins consumed.
    pub bins_used: usize,
    /// Posterior of the MAP hypothesis.
    pub final_posterior: f64,
    /// ln P(ion)/P(no ion) at stopping.
    pub log_odds: f64,
    /// `(time, P(ion))` after every sub-bin.
    pub posterior_trace: Vec<(f64, f64)>,
}

impl DetectionOutcome {
    pub fn is_correct(&self, truth: Hypothesis) -> bool {
        self.map_decision == truth
    }
}

fn check_rates(ion_rate: f64, empty_rate: f64) -> Result<()> {
    if !(empty_rate >= 0.0 && ion_rate >= empty_rate && ion_rate.is_finite()) {
        return Err(domain(format!(
            "need ion_rate >= empty_rate >= 0, got {ion_rate} and {empty_rate}"
        )));
    }
    Ok(())
}

/// Per-bin log-likelihood-ratio increments.
#[derive(Debug, Clone, Copy)]
struct LlrStep {
    drift: f64,
    per_count: f64,
}

impl LlrStep {
    fn new(ion_rate: f64, empty_rate: f64, sub_bin: f64) -> Self {
        let per_count = if ion_rate == empty_rate {
            0.0
        } else if empty_rate == 0.0 {
            f64::INFINITY
        } else {
            (ion_rate / empty_rate).ln()
        };
        LlrStep {
            drift: -(ion_rate - empty_rate) * sub_bin,
            per_count,
        }
    }

    fn increment(&self, n: u64) -> f64 {
        if n == 0 {
            self.drift
        } else {
            self.drift + n as f64 * self.per_count
        }
    }
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stops at the first bin where either posterior reaches `target`.
/// Returns `(bins_used, log_odds, reached_target)`.
fn walk(counts: &[u64], step: LlrStep, prior_log_odds: f64, target: f64, mut trace: Option<&mut Vec<(f64, f64)>>, sub_bin: f64) -> (usize, f64, bool) {
    let mut log_odds = prior_log_odds;
    for (k, &n) in counts.iter().enumerate() {
        log_odds += step.increment(n);
        let p_ion = logistic(log_odds);
        if let Some(t) = trace.as_deref_mut() {
            t.push(((k + 1) as f64 * sub_bin, p_ion));
        }
        if p_ion >= target || logistic(-log_odds) >= target {
            return (k + 1, log_odds, true);
        }
    }
    (counts.len(), log_odds, false)
}

fn outcome(bins: usize, log_odds: f64, reached: bool, sub_bin: f64, trace: Vec<(f64, f64)>) -> DetectionOutcome {
    let p_ion = logistic(log_odds);
    let map = if log_odds > 0.0 { Hypothesis::Ion } else { Hypothesis::NoIon };
    let decision = match (reached, map) {
        (false, _) => Decision::Undecided,
        (true, Hypothesis::Ion) => Decision::Ion,
        (true, Hypothesis::NoIon) => Decision::NoIon,
    };
    DetectionOutcome {
        decision,
        map_decision: map,
        stopping_time: bins as f64 * sub_bin,
        bins_used: bins,
        final_posterior: if map == Hypothesis::Ion { p_ion } else { logistic(-log_odds) },
        log_odds,
        posterior_trace: trace,
    }
}

/// Sequential detection on pre-binned counts (one entry per sub-bin).
pub fn bayesian_detect_counts(
    bin_counts: &[u64],
    ion_rate: f64,
    empty_rate: f64,
    config: &BayesianConfig,
) -> Result<DetectionOutcome> {
    check_rates(ion_rate, empty_rate)?;
    config.validate()?;
    let counts = &bin_counts[..bin_counts.len().min(config.max_bins())];
    let step = LlrStep::new(ion_rate, empty_rate, config.sub_bin);
    let prior = (config.prior_ion / (1.0 - config.prior_ion)).ln();
    let mut trace = Vec::new();
    let (bins, log_odds, reached) = walk(counts, step, prior, config.target_posterior, Some(&mut trace), config.sub_bin);
    Ok(outcome(bins, log_odds, reached, config.sub_bin, trace))
}

/// Counts per sub-bin for the first `max_bins` complete sub-bins.
pub fn bin_stream(stream: &EventStream, sub_bin: f64, max_bins: usize) -> Vec<u64> {
    let bin_ns = ((sub_bin * NS_PER_S).round() as u64).max(1);
    let n = ((stream.duration_ns() / bin_ns) as usize).min(max_bins);
    let mut counts = vec![0u64; n];
    let end = n as u64 * bin_ns;
    for &t in stream.timestamps_ns().iter().take_while(|&&t| t < end) {
        counts[(t / bin_ns) as usize] += 1;
    }
    counts
}

/// Walks the stream in sub-bins, updating the ion/no-ion posterior with the
/// Poisson likelihood ratio until either posterior reaches the target or
/// `max_time` runs out.
pub fn bayesian_detect(
    stream: &EventStream,
    ion_rate: f64,
    empty_rate: f64,
    config: &BayesianConfig,
) -> Result<DetectionOutcome> {
    config.validate()?;
    let counts = bin_stream(stream, config.sub_bin, config.max_bins());
    bayesian_detect_counts(&counts, ion_rate, empty_rate, config)
}

// ---------------------------------------------------------------------------
// Wald bound

/// Wald's mean-time approximations `ln((1-α)/α)/D` under each hypothesis,
/// with D the per-second KL divergence rate between the Poisson processes.
pub fn wald_bound(ion_rate: f64, empty_rate: f64, error: f64) -> Result<(f64, f64)> {
    if !(empty_rate > 0.0 && ion_rate > empty_rate && ion_rate.is_finite()) {
        return Err(domain(format!(
            "need ion_rate > empty_rate > 0, got {ion_rate} and {empty_rate}"
        )));
    }
    if !(error > 0.0 && error < 0.5) {
        return Err(domain(format!("error must lie in (0, 0.5), got {error}")));
    }
    let ratio = (ion_rate / empty_rate).ln();
    let kl_ion = ion_rate * ratio - ion_rate + empty_rate;
    let kl_empty = -empty_rate * ratio - empty_rate + ion_rate;
    let evidence = ((1.0 - error) / error).ln();
    Ok((evidence / kl_ion, evidence / kl_empty))
}

// ---------------------------------------------------------------------------
// Fidelity curve

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub target: f64,
    /// Equal-prior fraction of correct MAP decisions.
    pub fidelity: f64,
    pub fidelity_ion: f64,
    pub fidelity_empty: f64,
    /// Mean stopping time over both hypotheses at equal weight.
    pub mean_time: f64,
    pub mean_time_ion: f64,
    pub mean_time_empty: f64,
    pub undecided_fraction: f64,
    /// Wald mean times at error 1 - target, `None` when the rates are degenerate.
    pub wald_ion: Option<f64>,
    pub wald_empty: Option<f64>,
    /// Standard errors of the mean stopping times.
    pub mean_time_ion_se: f64,
    pub mean_time_empty_se: f64,
}

impl CurvePoint {
    pub fn wald_mean(&self) -> Option<f64> {
        Some(0.5 * (self.wald_ion? + self.wald_empty?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowPoint {
    pub window: f64,
    pub threshold: u64,
    pub fidelity: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FidelityCurve {
    pub ion_rate: f64,
    pub empty_rate: f64,
    pub trials: usize,
    pub adaptive: Vec<CurvePoint>,
    pub fixed_window: Vec<WindowPoint>,
}

impl FidelityCurve {
    /// `target,fidelity,mean_time_ms,wald_bound_ms`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "target,fidelity,mean_time_ms,wald_bound_ms")?;
        for p in &self.adaptive {
            let wald = p.wald_mean().map_or(String::from("nan"), |x| format!("{:?}", x * 1e3));
            writeln!(w, "{:?},{:?},{:?},{wald}", p.target, p.fidelity, p.mean_time * 1e3)?;
        }
        Ok(())
    }

    /// `window_ms,threshold,fidelity` for the fixed-window comparison.
    pub fn write_window_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "window_ms,threshold,fidelity")?;
        for p in &self.fixed_window {
            writeln!(w, "{:?},{},{:?}", p.window * 1e3, p.threshold, p.fidelity)?;
        }
        Ok(())
    }

    pub fn point(&self, target: f64) -> Option<&CurvePoint> {
        self.adaptive.iter().find(|p| p.target == target)
    }
}

/// RNG stream for one simulated trial; streams 0 and 1 belong to
/// `simulate_stream`.
fn trial_stream(trial: usize, ion: bool) -> u64 {
    2 + 2 * trial as u64 + ion as u64
}

fn simulate_trial_bins(
    budget: &RateBudget,
    dead: &DeadTimeModel,
    config: &BayesianConfig,
    seed: u64,
    trial: usize,
    ion: bool,
) -> Vec<u64> {
    let mut rng = trial_rng(seed, trial_stream(trial, ion));
    let bins = config.max_bins();
    let duration = bins as f64 * config.sub_bin;
    let stream = simulate_budget(budget, duration, ion, dead, &mut rng);
    bin_stream(&stream, config.sub_bin, bins)
}

/// Runs `trials` simulated trials per hypothesis through sequential
/// detection at every target. Inference uses the dead-time-corrected
/// hypothesis rates of the scenario. Each trial's data is shared across
/// targets.
pub fn fidelity_curve(scenario: &Scenario, targets: &[f64], trials: usize) -> Result<FidelityCurve> {
    scenario.validate()?;
    let config = scenario.detection;
    config.validate()?;
    for &t in targets {
        config.with_target(t).validate()?;
    }
    if trials == 0 {
        return Err(domain("need at least one trial"));
    }
    let (ion_rate, empty_rate) = scenario.observed_rates();
    check_rates(ion_rate, empty_rate)?;
    let step = LlrStep::new(ion_rate, empty_rate, config.sub_bin);
    let prior = (config.prior_ion / (1.0 - config.prior_ion)).ln();

    // Per trial and target: (bins used, correct, reached).
    let run = |ion: bool| -> Vec<Vec<(usize, bool, bool)>> {
        (0..trials)
            .into_par_iter()
            .map(|i| {
                let counts = simulate_trial_bins(&scenario.budget, &scenario.dead_time, &config, scenario.rng_seed, i, ion);
                targets
                    .iter()
                    .map(|&target| {
                        let (bins, log_odds, reached) = walk(&counts, step, prior, target, None, config.sub_bin);
                        let correct = (log_odds > 0.0) == ion;
                        (bins, correct, reached)
                    })
                    .collect()
            })
            .collect()
    };
    let ion_runs = run(true);
    let empty_runs = run(false);

    let n = trials as f64;
    let summarize = |runs: &[Vec<(usize, bool, bool)>], j: usize| {
        let (mut bins, mut bins_sq, mut correct, mut undecided) = (0u128, 0u128, 0usize, 0usize);
        for r in runs {
            let (b, c, reached) = r[j];
            bins += b as u128;
            bins_sq += (b * b) as u128;
            correct += c as usize;
            undecided += (!reached) as usize;
        }
        let mean = bins as f64 / n;
        let var = (bins_sq as f64 / n - mean * mean).max(0.0);
        let se = (var / n).sqrt() * config.sub_bin;
        (correct as f64 / n, mean * config.sub_bin, se, undecided)
    };

    let adaptive = targets
        .iter()
        .enumerate()
        .map(|(j, &target)| {
            let (f_ion, t_ion, se_ion, u_ion) = summarize(&ion_runs, j);
            let (f_empty, t_empty, se_empty, u_empty) = summarize(&empty_runs, j);
            let wald = wald_bound(ion_rate, empty_rate, 1.0 - target).ok();
            CurvePoint {
                target,
                fidelity: 0.5 * (f_ion + f_empty),
                fidelity_ion: f_ion,
                fidelity_empty: f_empty,
                mean_time: 0.5 * (t_ion + t_empty),
                mean_time_ion: t_ion,
                mean_time_empty: t_empty,
                undecided_fraction: (u_ion + u_empty) as f64 / (2.0 * n),
                wald_ion: wald.map(|w| w.0),
                wald_empty: wald.map(|w| w.1),
                mean_time_ion_se: se_ion,
                mean_time_empty_se: se_empty,
            }
        })
        .collect();

    let max_bins = config.max_bins();
    let stride = max_bins.div_ceil(100).max(1);
    let fixed_window = (1..=max_bins)
        .step_by(stride)
        .map(|k| {
            let window = k as f64 * config.sub_bin;
            let (threshold, fidelity) = analytic_threshold_fidelity(ion_rate, empty_rate, window)?;
            Ok(WindowPoint {
                window,
                threshold,
                fidelity,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(FidelityCurve {
        ion_rate,
        empty_rate,
        trials,
        adaptive,
        fixed_window,
    })
}

// ---------------------------------------------------------------------------
// Forward projection

/// Improved-device parameters for the forward projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams {
    pub collection_efficiency: f64,
    pub dark_rate: f64,
    pub quantum_efficiency: f64,
    pub emitter: EmitterParams,
    pub dead_time: DeadTimeModel,
    pub detection: BayesianConfig,
    /// Mean detection time at which fidelity is reported.
    pub report_time: f64,
    pub targets: Vec<f64>,
}

impl ProjectionParams {
    /// 5% collection, 100 cps dark counts, no laser scatter, 24% QE.
    pub fn reference() -> Self {
        ProjectionParams {
            collection_efficiency: 0.05,
            dark_rate: 100.0,
            quantum_efficiency: 0.24,
            emitter: EmitterParams::yb174(),
            dead_time: DeadTimeModel::default(),
            detection: BayesianConfig {
                target_posterior: 0.9977,
                sub_bin: 1e-6,
                max_time: 1e-3,
                prior_ion: 0.5,
            },
            report_time: 75e-6,
            targets: vec![
                0.9, 0.99, 0.995, 0.9977, 0.999, 0.9999, 1.0 - 1e-5, 1.0 - 1e-6, 1.0 - 1e-8,
                1.0 - 1e-10, 1.0 - 1e-12,
            ],
        }
    }

    pub fn budget(&self) -> Result<RateBudget> {
        let signal = scattering_rate(&self.emitter) * self.collection_efficiency * self.quantum_efficiency;
        RateBudget::new(signal, 0.0, 0.0, self.dark_rate, 0.0)
    }

    pub fn scenario(&self, seed: u64) -> Result<Scenario> {
        let mut s = crate::config::default_scenario();
        s.budget = self.budget()?;
        s.emitter = self.emitter;
        s.dead_time = self.dead_time;
        s.detection = self.detection;
        s.trial_duration = self.detection.max_time;
        s.rng_seed = seed;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionReport {
    pub budget: RateBudget,
    /// Fidelity interpolated on the adaptive curve at `report_time`, or the
    /// last point when the curve never gets that slow.
    pub fidelity: f64,
    /// Mean time of the reported point.
    pub mean_time: f64,
    /// Smallest mean time at which the adaptive curve reaches the target
    /// fidelity of the configuration, if it does.
    pub time_to_target: Option<f64>,
    pub curve: FidelityCurve,
}

/// Runs the forward-projection scenario through `fidelity_curve`.
pub fn projected_scenario_fidelity(params: &ProjectionParams, trials: usize, seed: u64) -> Result<ProjectionReport> {
    let scenario = params.scenario(seed)?;
    let curve = fidelity_curve(&scenario, &params.targets, trials)?;
    let pts = &curve.adaptive;
    let (fidelity, mean_time) = match pts.iter().position(|p| p.mean_time >= params.report_time) {
        Some(0) => (pts[0].fidelity, pts[0].mean_time),
        Some(i) => {
            let (a, b) = (&pts[i - 1], &pts[i]);
            let span = b.mean_time - a.mean_time;
            let w = if span > 0.0 { (params.report_time - a.mean_time) / span } else { 1.0 };
            (a.fidelity + w * (b.fidelity - a.fidelity), params.report_time)
        }
        None => {
            let last = pts.last().expect("targets validated non-empty");
            (last.fidelity, last.mean_time)
        }
    };
    let goal = params.detection.target_posterior;
    let time_to_target = pts.iter().find(|p| p.fidelity >= goal).map(|p| p.mean_time);
    Ok(ProjectionReport {
        budget: scenario.budget,
        fidelity,
        mean_time,
        time_to_target,
        curve,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Source;
    use approx::assert_relative_eq;

    #[test]
    fn perfectly_separated_counts() {
        let r = threshold_fidelity(&[10; 50], &[0; 50], 0.025).unwrap();
        assert_eq!(r.fidelity, 1.0);
        assert_eq!(r.threshold, 0);
        assert_eq!(r.histogram_ion[10], 50);
    }

    #[test]
    fn threshold_uses_strictly_greater() {
        // Count 3 in both classes: ties at the threshold go to no-ion.
        let r = threshold_fidelity(&[3, 5, 5, 5], &[1, 2, 3, 3], 1.0).unwrap();
        assert_eq!(r.threshold, 3);
        assert_relative_eq!(r.fidelity, 1.0 - 0.25 / 2.0);
    }

    #[test]
    fn threshold_rejects_empty_input() {
        assert!(threshold_fidelity(&[], &[1], 1.0).is_err());
        assert!(threshold_fidelity(&[1], &[], 1.0).is_err());
    }

    #[test]
    fn analytic_equal_rates_give_one_half() {
        let (k, f) = analytic_threshold_fidelity(500.0, 500.0, 0.01).unwrap();
        assert_eq!(f, 0.5);
        assert_eq!(k, 0);
    }

    #[test]
    fn analytic_zero_background() {
        let (k, f) = analytic_threshold_fidelity(100.0, 0.0, 0.02).unwrap();
        assert_eq!(k, 0);
        assert_relative_eq!(f, 1.0 - (-2.0f64).exp() / 2.0, max_relative = 1e-14);
    }

    #[test]
    fn analytic_rejects_reversed_rates() {
        assert!(analytic_threshold_fidelity(1.0, 2.0, 1.0).is_err());
        assert!(analytic_threshold_fidelity(2.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn poisson_cdf_handles_large_means() {
        let cdf = poisson_cdf_table(900.0, 1400);
        assert_relative_eq!(*cdf.last().unwrap(), 1.0, max_relative = 1e-12);
        assert!(cdf[900] > 0.5 && cdf[900] < 0.52);
    }

    #[test]
    fn wald_bound_examples() {
        let (t1, t0) = wald_bound(11.7e3, 6.9e3, 0.01).unwrap();
        assert!((t1 - 3.3e-3).abs() < 0.05e-3, "{t1}");
        assert!((t0 - 4.0e-3).abs() < 0.05e-3, "{t0}");

        let (h1, h0) = wald_bound(2.0 * 11.7e3, 2.0 * 6.9e3, 0.01).unwrap();
        assert_relative_eq!(h1, t1 / 2.0, max_relative = 1e-12);
        assert_relative_eq!(h0, t0 / 2.0, max_relative = 1e-12);

        let (z1, z0) = wald_bound(11.7e3, 6.9e3, 0.5 - 1e-12).unwrap();
        assert!(z1 < 1e-12 && z0 < 1e-12);

        assert!(wald_bound(6.9e3, 6.9e3, 0.01).is_err());
        assert!(wald_bound(11.7e3, 0.0, 0.01).is_err());
        assert!(wald_bound(11.7e3, 6.9e3, 0.5).is_err());
    }

    #[test]
    fn empty_stream_decides_no_ion_monotonically() {
        let cfg = BayesianConfig::default();
        let out = bayesian_detect(&EventStream::empty(0.05), 1e5, 1e2, &cfg).unwrap();
        assert_eq!(out.decision, Decision::NoIon);
        assert!(out.stopping_time <= 2.0 * cfg.sub_bin);
        for w in out.posterior_trace.windows(2) {
            assert!(w[1].1 < w[0].1);
        }
    }

    #[test]
    fn unit_likelihood_ratio_stays_at_prior() {
        let cfg = BayesianConfig::default();
        let times: Vec<f64> = (0..500).map(|k| (k as f64 + 0.5) * cfg.sub_bin).collect();
        let stream = EventStream::from_times(&times, Source::Dark, 0.05).unwrap();
        let out = bayesian_detect(&stream, 1e4, 1e4, &cfg).unwrap();
        assert_eq!(out.decision, Decision::Undecided);
        assert_relative_eq!(out.stopping_time, cfg.max_time, max_relative = 1e-12);
        assert!(out.posterior_trace.iter().all(|&(_, p)| p == 0.5));
    }

    #[test]
    fn zero_background_count_decides_ion_immediately() {
        let cfg = BayesianConfig::default();
        let out = bayesian_detect_counts(&[0, 1, 0, 0], 1e3, 0.0, &cfg).unwrap();
        assert_eq!(out.decision, Decision::Ion);
        assert_eq!(out.bins_used, 2);
        assert_eq!(out.final_posterior, 1.0);
    }

    #[test]
    fn decided_outcome_meets_target() {
        let cfg = BayesianConfig::default();
        let mut rng = trial_rng(4, 0);
        for ion in [true, false] {
            let s = simulate_budget(&RateBudget::table_one(), 0.05, ion, &DeadTimeModel::default(), &mut rng);
            let out = bayesian_detect(&s, 11.7e3, 6.9e3, &cfg).unwrap();
            if out.decision != Decision::Undecided {
                assert!(out.final_posterior >= cfg.target_posterior);
            }
            assert!(out.stopping_time <= cfg.max_time + 1e-12);
            let k = out.stopping_time / cfg.sub_bin;
            assert!((k - k.round()).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_config_rejected() {
        let bad = BayesianConfig { target_posterior: 0.5, ..BayesianConfig::default() };
        assert!(bayesian_detect_counts(&[1], 2.0, 1.0, &bad).is_err());
        let bad = BayesianConfig { sub_bin: 1.0, max_time: 0.5, ..BayesianConfig::default() };
        assert!(bayesian_detect_counts(&[1], 2.0, 1.0, &bad).is_err());
        assert!(bayesian_detect_counts(&[1], 1.0, 2.0, &BayesianConfig::default()).is_err());
    }

    #[test]
    fn vacuous_target_stops_after_one_bin() {
        let mut s = crate::config::default_scenario();
        s.rng_seed = 8;
        let curve = fidelity_curve(&s, &[0.5 + 1e-9], 200).unwrap();
        assert_relative_eq!(curve.adaptive[0].mean_time, s.detection.sub_bin, max_relative = 1e-12);
    }

    #[test]
    fn projection_budget_and_zero_collection() {
        let p = ProjectionParams::reference();
        let b = p.budget().unwrap();
        assert_relative_eq!(
            b.fluorescence,
            scattering_rate(&p.emitter) * 0.05 * 0.24,
            max_relative = 1e-12
        );
        assert_eq!(b.dark_counts, 100.0);
        assert_eq!(b.repump_scatter + b.doppler_scatter + b.rf_pickup, 0.0);

        let blind = ProjectionParams { collection_efficiency: 0.0, ..ProjectionParams::reference() };
        let report = projected_scenario_fidelity(&blind, 200, 3).unwrap();
        assert_eq!(report.fidelity, 0.5);
    }

    #[test]
    fn dark_counts_cost_fidelity_at_equal_time() {
        let p = ProjectionParams::reference();
        let signal = p.dead_time.observed_rate(p.budget().unwrap().ion_total());
        for window in [2e-6, 5e-6, 10e-6, 75e-6] {
            let (_, clean) = analytic_threshold_fidelity(signal, 0.0, window).unwrap();
            let (_, noisy) = analytic_threshold_fidelity(signal + 100.0, 100.0, window).unwrap();
            assert!(clean > noisy, "window {window}: {clean} vs {noisy}");
        }
    }
}
