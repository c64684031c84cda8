//! Geiger-mode event generation: superposed Poisson sources, nonparalyzable
//! dead time, 1 ns timestamps, and an optional analog front-end chain.

use std::f64::consts::PI;
use std::io::{BufRead, BufReader, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use crate::error::{domain, Error, Result};
use crate::io::{csv_err, reader};
use crate::model::{RateBudget, Scenario, Source};

pub const NS_PER_S: f64 = 1e9;

/// Per-trial RNG. Distinct `stream` values give independent sequences for
/// the same seed, so results do not depend on worker scheduling.
pub fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DeadTimeMode {
    Nonparalyzable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeadTimeModel {
    /// Seconds.
    pub dead_time: f64,
    pub mode: DeadTimeMode,
}

impl Default for DeadTimeModel {
    fn default() -> Self {
        DeadTimeModel {
            dead_time: 1e-6,
            mode: DeadTimeMode::Nonparalyzable,
        }
    }
}

impl DeadTimeModel {
    pub fn new(dead_time: f64) -> Result<Self> {
        if !(dead_time.is_finite() && dead_time >= 0.0) {
            return Err(domain(format!("dead time must be >= 0, got {dead_time}")));
        }
        Ok(DeadTimeModel {
            dead_time,
            mode: DeadTimeMode::Nonparalyzable,
        })
    }

    pub fn none() -> Self {
        DeadTimeModel {
            dead_time: 0.0,
            mode: DeadTimeMode::Nonparalyzable,
        }
    }

    /// Registered rate for a true rate `rate`: λ/(1 + λτ).
    pub fn observed_rate(&self, rate: f64) -> f64 {
        rate / (1.0 + rate * self.dead_time)
    }

    fn dead_ns(&self) -> u64 {
        (self.dead_time * NS_PER_S).round() as u64
    }
}

/// Time-ordered detector events with 1 ns timestamps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    timestamps_ns: Vec<u64>,
    labels: Vec<Source>,
    duration_ns: u64,
}

impl EventStream {
    pub fn new(timestamps_ns: Vec<u64>, labels: Vec<Source>, duration_ns: u64) -> Result<Self> {
        if timestamps_ns.len() != labels.len() {
            return Err(domain("timestamp and label counts differ"));
        }
        if timestamps_ns.windows(2).any(|w| w[1] <= w[0]) {
            return Err(domain("timestamps must be strictly increasing"));
        }
        if timestamps_ns.last().is_some_and(|&t| t >= duration_ns) {
            return Err(domain("timestamp beyond stream duration"));
        }
        Ok(EventStream {
            timestamps_ns,
            labels,
            duration_ns,
        })
    }

    pub fn empty(duration: f64) -> Self {
        EventStream {
            timestamps_ns: Vec::new(),
            labels: Vec::new(),
            duration_ns: (duration * NS_PER_S).round() as u64,
        }
    }

    /// Builds a stream from times in seconds with a single label.
    pub fn from_times(times: &[f64], label: Source, duration: f64) -> Result<Self> {
        let ts = times.iter().map(|t| (t * NS_PER_S).floor() as u64).collect::<Vec<_>>();
        Self::new(ts, vec![label; times.len()], (duration * NS_PER_S).round() as u64)
    }

    pub fn timestamps_ns(&self) -> &[u64] {
        &self.timestamps_ns
    }

    pub fn labels(&self) -> &[Source] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.timestamps_ns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps_ns.is_empty()
    }

    pub fn duration_ns(&self) -> u64 {
        self.duration_ns
    }

    pub fn duration(&self) -> f64 {
        self.duration_ns as f64 / NS_PER_S
    }

    /// Event counts ordered as [`Source::ALL`].
    pub fn counts_by_source(&self) -> [usize; 5] {
        let mut counts = [0; 5];
        for l in &self.labels {
            counts[l.index()] += 1;
        }
        counts
    }

    /// Merges two streams over the same span. Coincident timestamps keep the
    /// event from `self`.
    pub fn merge(&self, other: &EventStream) -> EventStream {
        let mut events: Vec<(u64, Source)> = self
            .timestamps_ns
            .iter()
            .copied()
            .zip(self.labels.iter().copied())
            .chain(other.timestamps_ns.iter().copied().zip(other.labels.iter().copied()))
            .collect();
        events.sort_by_key(|e| e.0);
        events.dedup_by_key(|e| e.0);
        let (timestamps_ns, labels) = events.into_iter().unzip();
        EventStream {
            timestamps_ns,
            labels,
            duration_ns: self.duration_ns.max(other.duration_ns),
        }
    }

    /// Two-column `timestamp_ns,label` with the duration in a comment line.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "# duration_ns={}", self.duration_ns)?;
        writeln!(w, "timestamp_ns,label")?;
        for (t, l) in self.timestamps_ns.iter().zip(&self.labels) {
            writeln!(w, "{t},{}", l.label())?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(rdr: R) -> Result<Self> {
        let mut text = String::new();
        BufReader::new(rdr).read_to_string(&mut text)?;
        let mut duration_ns = None;
        for line in text.as_bytes().lines() {
            let line = line?;
            if let Some(v) = line.trim().strip_prefix("# duration_ns=") {
                duration_ns = Some(v.trim().parse::<u64>().map_err(|_| Error::Csv {
                    row: 0,
                    column: 0,
                    message: format!("bad duration comment {v:?}"),
                })?);
            }
        }
        let mut timestamps = Vec::new();
        let mut labels = Vec::new();
        for (k, rec) in reader(text.as_bytes()).into_records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let row = rec.position().map_or(k + 1, |p| p.line() as usize);
            if k == 0 && rec.get(0) == Some("timestamp_ns") {
                continue;
            }
            let t = rec.get(0).and_then(|s| s.parse::<u64>().ok()).ok_or_else(|| Error::Csv {
                row,
                column: 1,
                message: format!("expected integer nanoseconds, got {:?}", rec.get(0).unwrap_or("")),
            })?;
            let label = rec.get(1).and_then(Source::from_label).ok_or_else(|| Error::Csv {
                row,
                column: 2,
                message: format!("unknown source label {:?}", rec.get(1).unwrap_or("")),
            })?;
            timestamps.push(t);
            labels.push(label);
        }
        let duration_ns = duration_ns.unwrap_or_else(|| timestamps.last().map_or(0, |t| t + 1));
        Self::new(timestamps, labels, duration_ns)
    }
}

/// Draws one trial of the budget's sources over `duration` seconds.
pub fn simulate_budget<R: Rng>(
    budget: &RateBudget,
    duration: f64,
    ion_present: bool,
    dead: &DeadTimeModel,
    rng: &mut R,
) -> EventStream {
    let duration_ns = (duration * NS_PER_S).round() as u64;
    let mut events: Vec<(u64, Source)> = Vec::new();
    for source in Source::ALL {
        if source == Source::Fluorescence && !ion_present {
            continue;
        }
        let mean = budget.rate(source) * duration;
        if mean <= 0.0 {
            continue;
        }
        let n = Poisson::new(mean).expect("positive finite mean").sample(rng) as usize;
        events.reserve(n);
        for _ in 0..n {
            let t = rng.random::<f64>() * duration;
            let ns = ((t * NS_PER_S).floor() as u64).min(duration_ns.saturating_sub(1));
            events.push((ns, source));
        }
    }
    events.sort_unstable();

    let dead_ns = dead.dead_ns();
    let mut timestamps_ns = Vec::with_capacity(events.len());
    let mut labels = Vec::with_capacity(events.len());
    let mut last: Option<u64> = None;
    for (t, s) in events {
        let live = match last {
            None => true,
            Some(prev) => t > prev && t - prev >= dead_ns,
        };
        if live {
            timestamps_ns.push(t);
            labels.push(s);
            last = Some(t);
        }
    }
    EventStream {
        timestamps_ns,
        labels,
        duration_ns,
    }
}

/// One seeded run of the scenario over its trial duration.
pub fn simulate_stream(scenario: &Scenario, ion_present: bool, dead: &DeadTimeModel) -> EventStream {
    let mut rng = trial_rng(scenario.rng_seed, ion_present as u64);
    simulate_budget(
        &scenario.budget,
        scenario.trial_duration,
        ion_present,
        dead,
        &mut rng,
    )
}

/// Counts per consecutive window of length `gate` over `[0, duration)`.
/// A trailing partial window is dropped.
pub fn gate_and_count(stream: &EventStream, gate: f64) -> Result<Vec<u64>> {
    let gate_ns = (gate * NS_PER_S).round();
    if !(gate_ns >= 1.0) {
        return Err(domain(format!("gate must be at least 1 ns, got {gate}")));
    }
    let gate_ns = gate_ns as u64;
    let windows = stream.duration_ns / gate_ns;
    if windows == 0 {
        return Err(domain(format!(
            "gate {gate} s is longer than the stream ({} s)",
            stream.duration()
        )));
    }
    let mut counts = vec![0u64; windows as usize];
    let covered = windows * gate_ns;
    for &t in stream.timestamps_ns.iter().take_while(|&&t| t < covered) {
        counts[(t / gate_ns) as usize] += 1;
    }
    Ok(counts)
}

/// Readout chain between the SPAD and the timestamper.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrontEndParams {
    pub quench_resistance: f64,
    /// Uniform amplitude range in volts.
    pub pulse_amplitude_range: (f64, f64),
    pub pulse_time_constant: f64,
    pub lowpass_cutoff: f64,
    pub rf_frequency: f64,
    /// Residual rf amplitude at the comparator input, after filtering.
    pub rf_pickup_amplitude: f64,
    pub schmitt_high: f64,
    pub schmitt_low: f64,
}

impl Default for FrontEndParams {
    fn default() -> Self {
        FrontEndParams {
            quench_resistance: 300e3,
            pulse_amplitude_range: (0.1, 0.5),
            pulse_time_constant: 0.5e-6,
            lowpass_cutoff: 1.6e6,
            rf_frequency: 17.7e6,
            rf_pickup_amplitude: 0.01,
            schmitt_high: 0.05,
            schmitt_low: 0.025,
        }
    }
}

impl FrontEndParams {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.pulse_amplitude_range;
        if !(self.schmitt_high > self.schmitt_low && self.schmitt_low > 0.0) {
            return Err(Error::Config(format!(
                "schmitt thresholds need high > low > 0, got {} / {}",
                self.schmitt_high, self.schmitt_low
            )));
        }
        if !(self.lowpass_cutoff > 0.0) {
            return Err(Error::Config("low-pass cutoff must be > 0".into()));
        }
        if !(lo >= 0.0 && hi >= lo && self.rf_pickup_amplitude >= 0.0) {
            return Err(Error::Config("amplitudes must be >= 0 with min <= max".into()));
        }
        if !(self.pulse_time_constant > 0.0 && self.quench_resistance >= 0.0 && self.rf_frequency >= 0.0) {
            return Err(Error::Config("pulse time constant must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub sample_rate: f64,
    pub volts: Vec<f64>,
}

impl Waveform {
    pub fn time(&self, k: usize) -> f64 {
        k as f64 / self.sample_rate
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "time_s,volts")?;
        for (k, v) in self.volts.iter().enumerate() {
            writeln!(w, "{:?},{v:?}", self.time(k))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontEndOutput {
    pub waveform: Waveform,
    pub digital: EventStream,
}

/// Renders analog pulses for `events`, low-pass filters them, adds the
/// residual rf, and digitizes with a Schmitt trigger.
pub fn simulate_frontend(
    events: &EventStream,
    params: &FrontEndParams,
    sample_rate: f64,
    seed: u64,
) -> Result<FrontEndOutput> {
    params.validate()?;
    if !(sample_rate.is_finite() && sample_rate >= 10.0 * params.lowpass_cutoff) {
        return Err(Error::Config(format!(
            "sample rate {sample_rate} Hz is below 10x the low-pass cutoff ({} Hz)",
            params.lowpass_cutoff
        )));
    }
    let mut rng = trial_rng(seed, 0xF0);
    let (amp_lo, amp_hi) = params.pulse_amplitude_range;
    let amplitudes: Vec<f64> = (0..events.len())
        .map(|_| amp_lo + (amp_hi - amp_lo) * rng.random::<f64>())
        .collect();

    let dt = 1.0 / sample_rate;
    let n = (events.duration() * sample_rate).ceil() as usize;
    let tau = params.pulse_time_constant;
    let pulse_decay = (-dt / tau).exp();
    let filter_decay = (-2.0 * PI * params.lowpass_cutoff * dt).exp();
    let omega = 2.0 * PI * params.rf_frequency;

    let mut volts = Vec::with_capacity(n);
    let mut digital_ts = Vec::new();
    let mut digital_labels = Vec::new();
    let (mut pulse, mut filtered) = (0.0, 0.0);
    let mut next = 0;
    let mut last_event: Option<usize> = None;
    let mut armed = true;
    for k in 0..n {
        let t = k as f64 * dt;
        pulse *= pulse_decay;
        while next < events.len() {
            let te = events.timestamps_ns[next] as f64 / NS_PER_S;
            if te > t {
                break;
            }
            pulse += amplitudes[next] * (-(t - te) / tau).exp();
            last_event = Some(next);
            next += 1;
        }
        filtered = filter_decay * filtered + (1.0 - filter_decay) * pulse;
        let v = filtered + params.rf_pickup_amplitude * (omega * t).sin();
        volts.push(v);

        if armed && v >= params.schmitt_high {
            armed = false;
            let ns = (t * NS_PER_S).round() as u64;
            if digital_ts.last().is_none_or(|&p| ns > p) && ns < events.duration_ns {
                let label = match last_event {
                    Some(i) if t - events.timestamps_ns[i] as f64 / NS_PER_S < 10.0 * tau => {
                        events.labels[i]
                    }
                    _ => Source::Rf,
                };
                digital_ts.push(ns);
                digital_labels.push(label);
            }
        } else if !armed && v < params.schmitt_low {
            armed = true;
        }
    }
    Ok(FrontEndOutput {
        waveform: Waveform { sample_rate, volts },
        digital: EventStream {
            timestamps_ns: digital_ts,
            labels: digital_labels,
            duration_ns: events.duration_ns,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dark_only(rate: f64) -> RateBudget {
        RateBudget::new(0.0, 0.0, 0.0, rate, 0.0).unwrap()
    }

    #[test]
    fn zero_rates_give_empty_stream() {
        let mut rng = trial_rng(1, 0);
        let s = simulate_budget(&RateBudget::default(), 1.0, true, &DeadTimeModel::default(), &mut rng);
        assert!(s.is_empty());
        assert_eq!(s.duration_ns(), 1_000_000_000);
    }

    #[test]
    fn fluorescence_only_when_ion_present() {
        let b = RateBudget::new(1e4, 0.0, 0.0, 0.0, 0.0).unwrap();
        let mut rng = trial_rng(3, 0);
        assert!(simulate_budget(&b, 0.1, false, &DeadTimeModel::none(), &mut rng).is_empty());
        let s = simulate_budget(&b, 0.1, true, &DeadTimeModel::none(), &mut rng);
        assert!(s.len() > 800);
        assert!(s.labels().iter().all(|&l| l == Source::Fluorescence));
    }

    #[test]
    fn stream_invariants_hold() {
        let mut rng = trial_rng(7, 0);
        let dead = DeadTimeModel::new(2e-6).unwrap();
        let s = simulate_budget(&RateBudget::table_one(), 2.0, true, &dead, &mut rng);
        for w in s.timestamps_ns().windows(2) {
            assert!(w[1] > w[0] && w[1] - w[0] >= 2000);
        }
        assert!(*s.timestamps_ns().last().unwrap() < s.duration_ns());
    }

    #[test]
    fn gate_and_count_hand_example() {
        let s = EventStream::from_times(&[1e-3, 2e-3, 26e-3], Source::Dark, 50e-3).unwrap();
        assert_eq!(gate_and_count(&s, 25e-3).unwrap(), vec![2, 1]);
    }

    #[test]
    fn gate_and_count_empty_and_errors() {
        let s = EventStream::empty(1.0);
        assert_eq!(gate_and_count(&s, 0.25).unwrap(), vec![0; 4]);
        assert!(gate_and_count(&s, 2.0).is_err());
        assert!(gate_and_count(&s, 0.0).is_err());
    }

    #[test]
    fn gate_counts_sum_to_covered_events() {
        let mut rng = trial_rng(11, 0);
        let s = simulate_budget(&dark_only(5e3), 1.05, true, &DeadTimeModel::none(), &mut rng);
        let counts = gate_and_count(&s, 0.1).unwrap();
        assert_eq!(counts.len(), 10);
        let covered = s.timestamps_ns().iter().filter(|&&t| t < 1_000_000_000).count() as u64;
        assert_eq!(counts.iter().sum::<u64>(), covered);
    }

    #[test]
    fn csv_round_trip() {
        let mut rng = trial_rng(5, 0);
        let s = simulate_budget(&RateBudget::table_one(), 0.01, true, &DeadTimeModel::default(), &mut rng);
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        assert_eq!(EventStream::read_csv(buf.as_slice()).unwrap(), s);
    }

    #[test]
    fn csv_rejects_bad_label() {
        let text = "timestamp_ns,label\n10,dark\n20,afterpulse\n";
        let err = EventStream::read_csv(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("row 3") && err.contains("column 2"), "{err}");
    }

    #[test]
    fn deterministic_given_seed() {
        let mut a = trial_rng(99, 4);
        let mut b = trial_rng(99, 4);
        let sa = simulate_budget(&RateBudget::table_one(), 0.5, true, &DeadTimeModel::default(), &mut a);
        let sb = simulate_budget(&RateBudget::table_one(), 0.5, true, &DeadTimeModel::default(), &mut b);
        assert_eq!(sa, sb);
    }

    #[test]
    fn single_pulse_gives_one_timestamp_about_a_microsecond_wide() {
        let events = EventStream::from_times(&[2e-6], Source::Dark, 10e-6).unwrap();
        let params = FrontEndParams {
            pulse_amplitude_range: (0.3, 0.3),
            rf_pickup_amplitude: 0.0,
            schmitt_high: 0.08,
            schmitt_low: 0.04,
            ..FrontEndParams::default()
        };
        let out = simulate_frontend(&events, &params, 500e6, 1).unwrap();
        assert_eq!(out.digital.len(), 1);
        let above = out.waveform.volts.iter().filter(|&&v| v >= params.schmitt_low).count();
        let width = above as f64 / out.waveform.sample_rate;
        assert!((0.5e-6..=1.5e-6).contains(&width), "pulse width {width}");
    }

    #[test]
    fn quiet_rf_gives_no_counts() {
        let out = simulate_frontend(&EventStream::empty(20e-6), &FrontEndParams::default(), 250e6, 1).unwrap();
        assert!(out.digital.is_empty());
    }

    #[test]
    fn loud_rf_counts_every_period() {
        let params = FrontEndParams {
            rf_pickup_amplitude: 0.06,
            ..FrontEndParams::default()
        };
        let duration = 20e-6;
        let out = simulate_frontend(&EventStream::empty(duration), &params, 500e6, 1).unwrap();
        // A sin(ωt) first rises through `high` at asin(high/A)/ω, then once per
        // period since it swings below `low` in between.
        let period = 1.0 / params.rf_frequency;
        let first = (params.schmitt_high / params.rf_pickup_amplitude).asin() / (2.0 * PI * params.rf_frequency);
        let analytic = ((duration - first) / period).floor() as usize + 1;
        let periods = (duration * params.rf_frequency).floor() as usize;
        assert!(out.digital.len().abs_diff(analytic) <= 1, "{} vs {analytic}", out.digital.len());
        assert!(out.digital.len() >= periods);
        let gaps: Vec<u64> = out.digital.timestamps_ns().windows(2).map(|w| w[1] - w[0]).collect();
        assert!(gaps.iter().all(|&g| g.abs_diff((period * NS_PER_S).round() as u64) <= 2), "{gaps:?}");
        assert!(out.digital.labels().iter().all(|&l| l == Source::Rf));
    }

    #[test]
    fn sample_rate_too_low_rejected() {
        let err = simulate_frontend(&EventStream::empty(1e-6), &FrontEndParams::default(), 15e6, 1);
        assert!(matches!(err, Err(Error::Config(_))));
    }

    #[test]
    fn bad_thresholds_rejected() {
        let params = FrontEndParams {
            schmitt_high: 0.02,
            schmitt_low: 0.04,
            ..FrontEndParams::default()
        };
        assert!(simulate_frontend(&EventStream::empty(1e-6), &params, 250e6, 1).is_err());
    }
}
