use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::count_rate;
use crate::engine::{
    gate_transmission, set_delay, DetectorParams, GateClock, HoldOffPolicy, PhotonSource,
    RunOptions,
};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScanMode {
    /// Count rates measured by running the engine at every delay.
    Simulated,
    /// Noise-free expected count rates.
    Analytic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanSettings {
    pub n_points: usize,
    pub gates_per_point: u64,
    pub holdoff: HoldOffPolicy,
    pub mode: ScanMode,
    pub run: RunOptions,
}

impl Default for ScanSettings {
    /// 80 delays (10 ps steps at 1.25 GHz), 0.1 s per delay, 100 ns hold-off.
    fn default() -> Self {
        Self {
            n_points: 80,
            gates_per_point: 125_000_000,
            holdoff: HoldOffPolicy::new(100e-9),
            mode: ScanMode::Simulated,
            run: RunOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayScanResult {
    /// Gate delay relative to the source pulses, centred on zero.
    pub delays_s: Vec<f64>,
    pub count_rates_cps: Vec<f64>,
    /// Full width at half maximum of the dark-subtracted response.
    pub fwhm_s: f64,
    /// Centroid of the response peak, the delay an operator would set.
    pub peak_delay_s: f64,
}

/// Phase shifter setting for a signed delay.
pub(crate) fn offset_for_delay(delay_s: f64, period_s: f64) -> f64 {
    let off = delay_s.rem_euclid(period_s);
    if off >= period_s {
        0.0
    } else {
        off
    }
}

/// Scans the gate delay over one full gate period, relative to the clock's
/// current phase setting, and extracts the effective gating width.
///
/// Delays run from `-T/2` in `n_points` equal steps so the peak (zero delay)
/// sits inside the scan. Before interpolation the dark level (mean of the
/// lowest quarter of the rates, or the exact dark rate in analytic mode) is
/// subtracted and the excess is converted to a mean detected photon number
/// per pulse, `-ln(1 - R/f_rep)`, which is proportional to the gate profile.
pub fn delay_scan(
    params: &DetectorParams,
    clock: &GateClock,
    source: &PhotonSource,
    settings: &ScanSettings,
    seed: u64,
) -> Result<DelayScanResult> {
    if settings.n_points < 16 {
        return Err(Error::invalid(
            "n_points",
            "need at least 16 delays per period",
        ));
    }
    if settings.gates_per_point == 0 {
        return Err(Error::invalid("gates_per_point", "must be >= 1"));
    }
    clock.validate()?;
    params.validate(clock.gate_freq_hz)?;
    source.validate()?;

    let period = clock.period_s();
    let step = period / settings.n_points as f64;
    let delays: Vec<f64> = (0..settings.n_points)
        .map(|i| -0.5 * period + i as f64 * step)
        .collect();

    let rates = delays
        .par_iter()
        .enumerate()
        .map(|(i, &d)| {
            let clock = set_delay(clock, offset_for_delay(clock.phase_offset_s + d, period))?;
            match settings.mode {
                ScanMode::Analytic => Ok(expected_rate(params, &clock, source)),
                ScanMode::Simulated => count_rate(
                    params,
                    &clock,
                    source,
                    &settings.holdoff,
                    settings.gates_per_point,
                    derive_seed(seed, i as u64),
                    settings.run,
                ),
            }
        })
        .collect::<Result<Vec<f64>>>()?;

    let duration = settings.gates_per_point as f64 * period;
    let dark = match settings.mode {
        ScanMode::Analytic => Some(params.dcr_cps().min(clock.gate_freq_hz)),
        ScanMode::Simulated => None,
    };
    let (fwhm, centroid) = extract_peak(&delays, &rates, source.rep_rate_hz, duration, dark)?;
    Ok(DelayScanResult {
        delays_s: delays,
        count_rates_cps: rates,
        fwhm_s: fwhm,
        peak_delay_s: centroid,
    })
}

fn expected_rate(params: &DetectorParams, clock: &GateClock, source: &PhotonSource) -> f64 {
    let period = clock.period_s();
    let delay = clock.phase_offset_s - period * (clock.phase_offset_s / period).round();
    let g = gate_transmission(delay, params.gate_width_s(), source.pulse_sigma_s);
    let photon = -(-source.mu * params.pde * g).exp_m1();
    source.rep_rate_hz * photon + params.dcr_cps().min(clock.gate_freq_hz)
}

fn extract_peak(
    delays: &[f64],
    rates: &[f64],
    rep_rate_hz: f64,
    duration_s: f64,
    known_dark: Option<f64>,
) -> Result<(f64, f64)> {
    let baseline = known_dark.unwrap_or_else(|| {
        let mut sorted = rates.to_vec();
        sorted.sort_by(f64::total_cmp);
        let low = &sorted[..(sorted.len() / 4).max(1)];
        low.iter().sum::<f64>() / low.len() as f64
    });

    let y: Vec<f64> = rates
        .iter()
        .map(|&r| {
            let p = ((r - baseline) / rep_rate_hz).min(1.0 - 1e-12);
            -(-p).ln_1p() * rep_rate_hz
        })
        .collect();
    let (k, &peak) = y
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty scan");

    // A peak must stand clear of the counting noise on the dark level.
    let noise = match known_dark {
        Some(_) => 0.0,
        None => 5.0 * (baseline * duration_s).max(1.0).sqrt() / duration_s,
    };
    if !(peak > noise) || k == 0 || k == y.len() - 1 {
        return Err(Error::NoPeak { excess: peak });
    }

    let half = 0.5 * peak;
    let cross = |idx: &mut dyn Iterator<Item = usize>| -> Option<f64> {
        let mut prev = k;
        for i in idx {
            if y[i] < half {
                let t = (y[prev] - half) / (y[prev] - y[i]);
                return Some(delays[prev] + t * (delays[i] - delays[prev]));
            }
            prev = i;
        }
        None
    };
    let left = cross(&mut (0..k).rev()).ok_or(Error::NoPeak { excess: peak })?;
    let right = cross(&mut (k + 1..y.len())).ok_or(Error::NoPeak { excess: peak })?;

    let floor = 0.05 * peak;
    let lo = (0..=k)
        .rev()
        .take_while(|&i| y[i] > floor)
        .last()
        .unwrap_or(k);
    let hi = (k..y.len())
        .take_while(|&i| y[i] > floor)
        .last()
        .unwrap_or(k);
    let (mut num, mut den) = (0.0, 0.0);
    for i in lo..=hi {
        num += delays[i] * y[i];
        den += y[i];
    }
    Ok((right - left, num / den))
}
