use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::delay::{delay_scan, offset_for_delay, ScanSettings};
use super::run_counts;
use crate::engine::{
    set_delay, DetectorParams, GateClock, HoldOffPolicy, PhotonSource, RunOptions,
};
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilitySettings {
    pub total_minutes: usize,
    pub acquisition_s: f64,
    pub rescan_every_min: usize,
    /// When false the delay is optimized once, at minute 0.
    pub rescan: bool,
    /// Injected slow drift of the optimal delay.
    pub drift_s_per_hour: f64,
    pub holdoff: HoldOffPolicy,
    pub scan: ScanSettings,
    pub run: RunOptions,
}

impl Default for StabilitySettings {
    fn default() -> Self {
        Self {
            total_minutes: 60,
            acquisition_s: 10.0,
            rescan_every_min: 10,
            rescan: true,
            drift_s_per_hour: 0.0,
            holdoff: HoldOffPolicy::new(100e-9),
            scan: ScanSettings::default(),
            run: RunOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilitySeries {
    pub t_min: Vec<u64>,
    pub counts_10s: Vec<u64>,
    /// Minutes at which the delay was re-scanned.
    pub rescan_marks: Vec<u64>,
    /// Phase shifter setting in force at each minute.
    pub delays_s: Vec<f64>,
}

impl StabilitySeries {
    /// Counts outside the rescan minutes.
    pub fn drift_samples(&self) -> Vec<f64> {
        self.t_min
            .iter()
            .zip(&self.counts_10s)
            .filter(|(t, _)| !self.rescan_marks.contains(t))
            .map(|(_, &c)| c as f64)
            .collect()
    }

    pub fn rsd(&self) -> f64 {
        stats::rsd(&self.drift_samples())
    }

    /// Relative standard deviation of a Poisson count with the observed mean.
    pub fn poisson_rsd(&self) -> f64 {
        let m = stats::mean(&self.drift_samples());
        if m > 0.0 {
            1.0 / m.sqrt()
        } else {
            0.0
        }
    }
}

fn drift_at(settings: &StabilitySettings, minute: u64) -> f64 {
    settings.drift_s_per_hour * minute as f64 / 60.0
}

/// Minute-by-minute count record with periodic delay re-optimization.
///
/// Each minute contributes one acquisition of `acquisition_s`. Every
/// `rescan_every_min` minutes (and at minute 0) the delay is scanned over the
/// full period and set to the centroid of the response; if the scan finds no
/// peak the previous setting is kept. The injected drift moves the optimal
/// delay linearly in time.
pub fn stability_run(
    params: &DetectorParams,
    clock: &GateClock,
    source: &PhotonSource,
    settings: &StabilitySettings,
    seed: u64,
) -> Result<StabilitySeries> {
    if settings.total_minutes < 20 {
        return Err(Error::invalid("total_minutes", "must be >= 20"));
    }
    if settings.rescan_every_min == 0 {
        return Err(Error::invalid("rescan_every_min", "must be >= 1"));
    }
    if !(settings.acquisition_s > 0.0 && settings.acquisition_s <= 60.0) {
        return Err(Error::invalid("acquisition_s", "must lie in (0, 60] s"));
    }
    if !settings.drift_s_per_hour.is_finite() {
        return Err(Error::invalid("drift_s_per_hour", "must be finite"));
    }
    clock.validate()?;
    let period = clock.period_s();
    let n_gates = (settings.acquisition_s * clock.gate_freq_hz).round() as u64;
    let gates_per_minute = (60.0 * clock.gate_freq_hz).round() as u64;

    let mut series = StabilitySeries {
        t_min: Vec::new(),
        counts_10s: Vec::new(),
        rescan_marks: Vec::new(),
        delays_s: Vec::new(),
    };
    let mut delay = 0.0;
    let total = settings.total_minutes as u64;
    let block = settings.rescan_every_min as u64;

    for block_start in (0..total).step_by(block as usize) {
        if block_start == 0 || settings.rescan {
            let drift = drift_at(settings, block_start);
            let shifted = set_delay(clock, offset_for_delay(-drift, period))?;
            match delay_scan(
                params,
                &shifted,
                source,
                &settings.scan,
                derive_seed(seed, 2 * block_start + 1),
            ) {
                Ok(scan) => delay = scan.peak_delay_s,
                Err(Error::NoPeak { .. }) => {}
                Err(e) => return Err(e),
            }
            series.rescan_marks.push(block_start);
        }

        let minutes: Vec<u64> = (block_start..(block_start + block).min(total)).collect();
        let counts = minutes
            .par_iter()
            .map(|&m| {
                let effective = delay - drift_at(settings, m);
                let c = GateClock {
                    gate_index: m * gates_per_minute,
                    ..set_delay(clock, offset_for_delay(effective, period))?
                };
                let summary = run_counts(
                    params,
                    &c,
                    source,
                    &settings.holdoff,
                    n_gates,
                    derive_seed(seed, 2 * m),
                    settings.run,
                )?;
                Ok(summary.recorded.total())
            })
            .collect::<Result<Vec<u64>>>()?;
        for (m, c) in minutes.into_iter().zip(counts) {
            series.t_min.push(m);
            series.counts_10s.push(c);
            series.delays_s.push(delay);
        }
    }
    Ok(series)
}
