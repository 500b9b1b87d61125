use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{
    DetectorParams, GateClock, HoldOffPolicy, PhotonSource, RunOptions, Simulation, SourceSchedule,
};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Fewest photon counts an afterpulse estimate is reported for.
pub const MIN_PHOTON_COUNTS: i64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width_s: f64,
    pub origin_s: f64,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn new(bin_width_s: f64, origin_s: f64, n_bins: usize) -> Self {
        Self {
            bin_width_s,
            origin_s,
            counts: vec![0; n_bins],
        }
    }

    pub fn bin_start_s(&self, i: usize) -> f64 {
        self.origin_s + i as f64 * self.bin_width_s
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AfterpulseSettings {
    pub holdoff: HoldOffPolicy,
    pub acquisition_s: f64,
    pub bin_width_s: f64,
    pub window_s: f64,
    /// Bins on either side of an expected pulse time treated as photon peak.
    pub peak_half_width_bins: usize,
    /// Trailing fraction of the window used for the dark baseline.
    pub tail_fraction: f64,
    pub run: RunOptions,
}

impl AfterpulseSettings {
    /// 16 µs window in 1.6 ns bins, 100 ns hold-off, 4 s acquisition.
    pub fn standard(holdoff: HoldOffPolicy) -> Self {
        Self {
            holdoff,
            acquisition_s: 4.0,
            bin_width_s: 1.6e-9,
            window_s: 16e-6,
            peak_half_width_bins: 3,
            tail_fraction: 0.1,
            run: RunOptions::default(),
        }
    }

    fn validate(&self, gate_period_s: f64) -> Result<()> {
        self.holdoff.validate()?;
        if !(self.acquisition_s > 0.0 && self.acquisition_s.is_finite()) {
            return Err(Error::invalid("acquisition_s", "must be positive"));
        }
        if !(self.bin_width_s >= gate_period_s) {
            return Err(Error::invalid(
                "bin_width_s",
                "must be at least one gate period",
            ));
        }
        if !(self.window_s >= 10.0 * self.bin_width_s) {
            return Err(Error::invalid("window_s", "must span at least 10 bins"));
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction < 1.0) {
            return Err(Error::invalid("tail_fraction", "must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AfterpulseResult {
    pub p_ap: f64,
    pub p_ap_per_gate: f64,
    pub window_s: f64,
    pub photon_counts: i64,
    pub afterpulse_counts: i64,
    pub dcr_baseline_per_bin: f64,
    /// Recorded detections at laser-pulse gates that opened a window.
    pub starts: u64,
    /// Number of recorded events entered into the histogram (a detection
    /// enters once per open window it falls in).
    pub binned_events: u64,
}

/// Start-stop afterpulse histogram.
///
/// Every recorded detection in a gate that received a laser pulse opens an
/// analysis window of `window_s`; every recorded event (the opening one
/// included, at zero delay) is binned by its delay from each open window.
/// Later laser pulses show up as photon peaks every `1/f_rep`; those bins,
/// and bins entirely inside the hold-off, are excluded from the afterpulse
/// sum. The dark baseline is the mean of the remaining bins in the trailing
/// `tail_fraction` of the window, and
///
/// * photon counts are the baseline-subtracted counts of the zero-delay peak,
/// * afterpulse counts are the baseline-subtracted counts of all other
///   non-peak bins, clamped at zero after summation.
///
/// Before the analysis each bin is scaled by the fraction of starts that
/// could record an event there: a recorded event inside a window blanks
/// the following hold-off for that window, which would otherwise deplete
/// late bins and bias the tail baseline low. The returned histogram holds
/// the raw counts.
pub fn afterpulse_measurement(
    params: &DetectorParams,
    clock: &GateClock,
    source: &PhotonSource,
    settings: &AfterpulseSettings,
    seed: u64,
) -> Result<(Histogram, AfterpulseResult)> {
    let period = clock.period_s();
    settings.validate(period)?;
    let n_gates = (settings.acquisition_s * clock.gate_freq_hz)
        .round()
        .max(1.0) as u64;
    let n_bins = (settings.window_s / settings.bin_width_s).round() as usize;
    let window_gates = (settings.window_s * clock.gate_freq_hz).round() as u64;
    let gates_per_bin = settings.bin_width_s / period;

    let schedule = SourceSchedule::new(params, clock, source);
    let mut hist = Histogram::new(settings.bin_width_s, 0.0, n_bins);
    let mut open: VecDeque<u64> = VecDeque::new();
    let (mut starts, mut binned) = (0u64, 0u64);
    let holdoff_gates = settings.holdoff.gates(clock.gate_freq_hz);
    // Difference array over delay (in gates) of start windows unable to
    // record: hold-off after each recorded event, and window tails that run
    // past the end of the acquisition.
    let mut dead = vec![0i64; window_gates as usize + 1];
    let mut mark_dead = |from: u64, to: u64| {
        let (a, b) = (
            from.min(window_gates) as usize,
            to.min(window_gates) as usize,
        );
        if a < b {
            dead[a] += 1;
            dead[b] -= 1;
        }
    };

    let sim = Simulation {
        params,
        clock,
        source,
        holdoff: &settings.holdoff,
        options: settings.run,
    };
    sim.run(n_gates, seed, |ev| {
        if !ev.recorded {
            return Ok(());
        }
        let g = ev.gate_index;
        while open.front().is_some_and(|&s| g - s >= window_gates) {
            open.pop_front();
        }
        let is_start = schedule.is_pulse_gate(g);
        if is_start {
            open.push_back(g);
            starts += 1;
        }
        for &s in &open {
            let delay = g - s;
            let bin = (delay as f64 / gates_per_bin) as usize;
            if bin < n_bins {
                hist.counts[bin] += 1;
                binned += 1;
            }
            mark_dead(
                delay + 1,
                delay.saturating_add(holdoff_gates).saturating_add(1),
            );
        }
        Ok(())
    })?;
    for &s in &open {
        mark_dead(n_gates - s, window_gates);
    }

    let live = live_fraction(&dead, n_bins, gates_per_bin, starts);
    let result = analyse(
        &hist,
        &live,
        source.rep_rate_hz,
        holdoff_gates,
        gates_per_bin,
        window_gates,
        settings,
        starts,
        binned,
    )?;
    Ok((hist, result))
}

/// Fraction of start windows live in each bin.
fn live_fraction(dead: &[i64], n_bins: usize, gates_per_bin: f64, starts: u64) -> Vec<f64> {
    let mut dead_gates = vec![0i64; n_bins];
    let mut gates = vec![0i64; n_bins];
    let mut running = 0i64;
    for (delay, d) in dead.iter().enumerate().take(dead.len() - 1) {
        running += d;
        let bin = (delay as f64 / gates_per_bin) as usize;
        if bin < n_bins {
            dead_gates[bin] += running;
            gates[bin] += 1;
        }
    }
    (0..n_bins)
        .map(|i| {
            let total = gates[i] as f64 * starts as f64;
            if total > 0.0 {
                (1.0 - dead_gates[i] as f64 / total).max(0.0)
            } else {
                0.0
            }
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn analyse(
    hist: &Histogram,
    live: &[f64],
    rep_rate_hz: f64,
    holdoff_gates: u64,
    gates_per_bin: f64,
    window_gates: u64,
    settings: &AfterpulseSettings,
    starts: u64,
    binned: u64,
) -> Result<AfterpulseResult> {
    if starts == 0 {
        return Err(Error::InsufficientStatistics {
            photon_counts: 0,
            required: MIN_PHOTON_COUNTS,
        });
    }
    let n = hist.counts.len();
    let bins_per_pulse = 1.0 / (rep_rate_hz * settings.bin_width_s);
    let hw = settings.peak_half_width_bins as f64;
    let is_peak = |i: usize| {
        let k = (i as f64 / bins_per_pulse).round();
        (i as f64 - k * bins_per_pulse).abs() <= hw
    };
    // Bins whose first gate lies within the hold-off after the start.
    let in_holdoff = |i: usize| (i as f64 * gates_per_bin).floor() <= holdoff_gates as f64;

    let corrected = |i: usize| {
        if live[i] > 0.0 {
            hist.counts[i] as f64 / live[i]
        } else {
            0.0
        }
    };
    let usable = |i: usize| !is_peak(i) && !in_holdoff(i) && live[i] > 0.0;

    let tail_start = ((1.0 - settings.tail_fraction) * n as f64).floor() as usize;
    let tail: Vec<f64> = (tail_start..n)
        .filter(|&i| usable(i))
        .map(corrected)
        .collect();
    if tail.is_empty() {
        return Err(Error::invalid(
            "holdoff",
            "hold-off covers the whole baseline tail of the window",
        ));
    }
    let baseline = tail.iter().sum::<f64>() / tail.len() as f64;

    let zero_peak = (0..n).take_while(|&i| i as f64 <= hw);
    let photon = zero_peak
        .map(|i| hist.counts[i] as f64 - baseline)
        .sum::<f64>();
    let excess: f64 = (0..n)
        .filter(|&i| usable(i))
        .map(|i| corrected(i) - baseline)
        .sum();

    let photon_counts = photon.round() as i64;
    if photon_counts < MIN_PHOTON_COUNTS {
        return Err(Error::InsufficientStatistics {
            photon_counts,
            required: MIN_PHOTON_COUNTS,
        });
    }
    let afterpulse_counts = excess.max(0.0).round() as i64;
    let p_ap = afterpulse_counts as f64 / photon_counts as f64;
    let live_gates = window_gates.saturating_sub(holdoff_gates).max(1);
    Ok(AfterpulseResult {
        p_ap,
        p_ap_per_gate: p_ap / live_gates as f64,
        window_s: settings.window_s,
        photon_counts,
        afterpulse_counts,
        dcr_baseline_per_bin: baseline,
        starts,
        binned_events: binned,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PapPoint {
    pub temperature_k: f64,
    pub pde: f64,
    pub p_ap: f64,
    pub p_ap_per_gate: f64,
    pub photon_counts: i64,
    pub afterpulse_counts: i64,
}

/// Afterpulse probability versus detection efficiency for every preset.
pub fn pap_vs_pde_curve(
    presets: &[DetectorParams],
    pde_grid: &[f64],
    clock: &GateClock,
    source: &PhotonSource,
    settings: &AfterpulseSettings,
    seed: u64,
) -> Result<Vec<PapPoint>> {
    let jobs: Vec<DetectorParams> = presets
        .iter()
        .flat_map(|p| pde_grid.iter().map(move |&pde| p.with_pde(pde)))
        .collect();
    jobs.par_iter()
        .enumerate()
        .map(|(i, params)| {
            let (_, r) = afterpulse_measurement(
                params,
                clock,
                source,
                settings,
                derive_seed(seed, i as u64),
            )?;
            Ok(PapPoint {
                temperature_k: params.temperature_k,
                pde: params.pde,
                p_ap: r.p_ap,
                p_ap_per_gate: r.p_ap_per_gate,
                photon_counts: r.photon_counts,
                afterpulse_counts: r.afterpulse_counts,
            })
        })
        .collect()
}
