use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{angular, ChainConfig};
use crate::error::{Error, Result};

/// Longest trace `simulate_gate_waveform` accepts.
pub const MAX_TRACE_DURATION_S: f64 = 10e-6;

/// Zero padding appended before filtering so that ringing and the coupling
/// tail do not wrap around onto the start of the trace.
const PAD_S: f64 = 400e-9;

/// Pulses are truncated after this many decay constants.
const PULSE_SPAN_DECAYS: f64 = 40.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WaveformTrace {
    pub sample_rate_hz: f64,
    pub t0_s: f64,
    pub samples: Vec<f64>,
}

impl WaveformTrace {
    pub fn time_of(&self, index: usize) -> f64 {
        self.t0_s + index as f64 / self.sample_rate_hz
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.samples.iter().map(|v| v * v).sum::<f64>() / self.samples.len() as f64).sqrt()
    }

    pub fn max(&self) -> f64 {
        self.samples
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Avalanches only build up while the gate is above breakdown: onsets in the
/// inactive half-cycle are deferred to the start of the next active one.
fn gated_onset(t: f64, period: f64) -> f64 {
    let cycle = (t / period).floor();
    if t - cycle * period < 0.5 * period {
        t
    } else {
        (cycle + 1.0) * period
    }
}

fn avalanche_current(chain: &ChainConfig, dt: f64) -> f64 {
    let fe = &chain.front_end;
    let peak = fe.avalanche_charge_c / (fe.decay_s - fe.rise_s);
    peak * ((-dt / fe.decay_s).exp() - (-dt / fe.rise_s).exp())
}

/// Filters the aperiodic part of the input (avalanches and noise) through
/// the chain by multiplication on the padded discrete spectrum.
fn filter_transient(chain: &ChainConfig, input: &[f64], sample_rate_hz: f64) -> Vec<f64> {
    let n = input.len();
    let padded = n + (PAD_S * sample_rate_hz).ceil() as usize;
    let mut buf: Vec<Complex64> = input
        .iter()
        .map(|&v| Complex64::new(v, 0.0))
        .chain(std::iter::repeat(Complex64::new(0.0, 0.0)))
        .take(padded)
        .collect();

    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(padded).process(&mut buf);
    let df = sample_rate_hz / padded as f64;
    for (k, x) in buf.iter_mut().enumerate() {
        let h = if k <= padded / 2 {
            chain.transfer(k as f64 * df)
        } else {
            chain.transfer((padded - k) as f64 * df).conj()
        };
        *x *= h;
    }
    planner.plan_fft_inverse(padded).process(&mut buf);
    let scale = 1.0 / padded as f64;
    buf[..n].iter().map(|x| x.re * scale).collect()
}

fn transient_input(chain: &ChainConfig, onsets: &[f64], n: usize, sample_rate_hz: f64) -> Vec<f64> {
    let mut input = vec![0.0; n];
    let span = PULSE_SPAN_DECAYS * chain.front_end.decay_s;
    for &onset in onsets {
        let first = (onset * sample_rate_hz).ceil().max(0.0) as usize;
        let last = (((onset + span) * sample_rate_hz).floor() as usize).min(n.saturating_sub(1));
        for (k, v) in input.iter_mut().enumerate().take(last + 1).skip(first) {
            let dt = k as f64 / sample_rate_hz - onset;
            *v += chain.front_end.load_ohm * avalanche_current(chain, dt);
        }
    }
    input
}

/// Simulates the chain output for `duration_s` of gating with avalanches
/// injected at `avalanche_times`.
///
/// The input is the gate feed-through `R·C(V)·dV/dt` with
/// `V = (Vpp/2)·sin(2π·f_g·t)` and `C(V) = C0·(1 + β·V/Vpp)`, which expands
/// exactly into a fundamental and a second harmonic; those are propagated as
/// steady-state tones through the chain's transfer function. Avalanche
/// current pulses and white noise are filtered on the zero-padded spectrum.
pub fn simulate_gate_waveform(
    chain: &ChainConfig,
    avalanche_times: &[f64],
    duration_s: f64,
    noise_rms_v: f64,
    seed: u64,
) -> Result<WaveformTrace> {
    chain.validate()?;
    if !(duration_s > 0.0 && duration_s <= MAX_TRACE_DURATION_S) {
        return Err(Error::invalid(
            "duration_s",
            format!("must lie in (0, {MAX_TRACE_DURATION_S:e}] s"),
        ));
    }
    if !(noise_rms_v >= 0.0 && noise_rms_v.is_finite()) {
        return Err(Error::invalid("noise_rms_v", "must be finite and >= 0"));
    }
    if let Some(&t) = avalanche_times
        .iter()
        .find(|&&t| !(t >= 0.0 && t <= duration_s))
    {
        return Err(Error::AvalancheOutOfRange { t_s: t, duration_s });
    }

    let sample_rate = chain.gate_freq_hz * chain.front_end.samples_per_gate as f64;
    let n = ((duration_s * sample_rate).round() as usize).max(1);
    let period = chain.gate_period_s();
    let onsets: Vec<f64> = avalanche_times
        .iter()
        .map(|&t| gated_onset(t, period))
        .collect();

    let mut input = transient_input(chain, &onsets, n, sample_rate);
    if noise_rms_v > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, noise_rms_v).expect("finite sigma");
        for v in &mut input {
            *v += normal.sample(&mut rng);
        }
    }
    let mut samples = filter_transient(chain, &input, sample_rate);

    let fe = &chain.front_end;
    let amp = 0.5 * chain.gate_amplitude_vpp;
    let w = angular(chain.gate_freq_hz);
    let fundamental = fe.load_ohm * fe.junction_capacitance_f * amp * w;
    let second = fe.load_ohm * fe.junction_capacitance_f * fe.beta * amp * amp * w
        / (2.0 * chain.gate_amplitude_vpp);
    let h1 = chain.transfer(chain.gate_freq_hz);
    let h2 = chain.transfer(2.0 * chain.gate_freq_hz);
    for (k, v) in samples.iter_mut().enumerate() {
        let t = k as f64 / sample_rate;
        *v += fundamental * h1.norm() * (w * t + h1.arg()).cos()
            + second * h2.norm() * (2.0 * w * t + h2.arg()).sin();
    }

    Ok(WaveformTrace {
        sample_rate_hz: sample_rate,
        t0_s: 0.0,
        samples,
    })
}

/// Delay from an avalanche onset to the rising half-peak crossing of its
/// noise-free filtered pulse.
pub(super) fn pulse_crossing_delay(chain: &ChainConfig, onset_s: f64) -> Result<f64> {
    chain.validate()?;
    let sample_rate = chain.gate_freq_hz * chain.front_end.samples_per_gate as f64;
    let n = ((onset_s + 60e-9) * sample_rate).round() as usize;
    let input = transient_input(chain, &[onset_s], n, sample_rate);
    let out = filter_transient(chain, &input, sample_rate);
    let peak = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(Error::invalid(
            "front_end",
            "avalanche pulse produced no output",
        ));
    }
    let first = rising_crossings(&out, 0.5 * peak).next();
    first
        .map(|x| x / sample_rate - onset_s)
        .ok_or_else(|| Error::invalid("front_end", "no half-peak crossing"))
}

/// Fractional sample positions where the trace rises through `threshold`.
fn rising_crossings(samples: &[f64], threshold: f64) -> impl Iterator<Item = f64> + '_ {
    samples
        .windows(2)
        .enumerate()
        .filter(move |(_, w)| w[0] < threshold && w[1] >= threshold)
        .map(move |(k, w)| k as f64 + (threshold - w[0]) / (w[1] - w[0]))
}

/// Threshold discrimination with gate coincidence.
///
/// Crossing times are referred back to the avalanche by subtracting the
/// chain latency; a crossing is kept only if it falls inside the acceptance
/// window of its gate period, and only the first per gate period survives.
pub fn discriminate(
    trace: &WaveformTrace,
    threshold_v: f64,
    chain: &ChainConfig,
) -> Result<Vec<f64>> {
    if !(threshold_v > 0.0) {
        return Err(Error::invalid("threshold_v", "must be > 0"));
    }
    let period = chain.gate_period_s();
    let timing = chain.timing;
    let mut events = Vec::new();
    let mut last_gate = None;
    for x in rising_crossings(&trace.samples, threshold_v) {
        let t = trace.t0_s + x / trace.sample_rate_hz - timing.latency_s;
        let rel = t - timing.window_phase_s;
        let gate = (rel / period).floor();
        let phase = rel - gate * period;
        if phase >= timing.window_width_s || last_gate == Some(gate as i64) {
            continue;
        }
        last_gate = Some(gate as i64);
        events.push(t);
    }
    Ok(events)
}
