//! Readout chain: two identical low-pass filters around a low-noise
//! amplifier, behind an AC-coupling capacitor. Synthesizes the filters,
//! evaluates S21, simulates gated traces and discriminates avalanches.

pub mod filter;
pub mod jacobi;
mod waveform;

use std::f64::consts::TAU;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use filter::{
    design_order, estimate_order, synth_lowpass, FilterDesign, FilterFamily, FilterSpec, Section,
};
pub use waveform::{discriminate, simulate_gate_waveform, WaveformTrace};

use crate::error::{Error, Result};
use filter::to_db;

/// SPAD front end as seen by the chain input: a gate-driven junction
/// capacitance feeding a matched load, plus the avalanche current pulse shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontEnd {
    pub load_ohm: f64,
    /// Zero-bias junction capacitance C0.
    pub junction_capacitance_f: f64,
    /// Linear voltage coefficient of C(V) = C0·(1 + β·V/Vpp).
    pub beta: f64,
    pub avalanche_charge_c: f64,
    pub rise_s: f64,
    pub decay_s: f64,
    /// Samples per gate period in simulated traces.
    pub samples_per_gate: usize,
}

impl Default for FrontEnd {
    fn default() -> Self {
        Self {
            load_ohm: 50.0,
            junction_capacitance_f: 0.5e-12,
            beta: 0.1,
            avalanche_charge_c: 50e-15,
            rise_s: 30e-12,
            decay_s: 200e-12,
            samples_per_gate: 16,
        }
    }
}

/// Discriminator timing: the chain latency subtracted from every crossing and
/// the gate-synchronized acceptance window applied afterwards.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub latency_s: f64,
    /// Start of the acceptance window relative to each gate period start.
    pub window_phase_s: f64,
    pub window_width_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub lpf: FilterDesign,
    pub lpf_stages: usize,
    pub amp_gain_db: f64,
    pub gate_freq_hz: f64,
    pub gate_amplitude_vpp: f64,
    pub bias_voltage_v: f64,
    /// High-pass corner of the AC coupling; `None` means DC coupled.
    pub coupling_hz: Option<f64>,
    pub front_end: FrontEnd,
    pub timing: Timing,
}

impl ChainConfig {
    /// The monolithic readout chain: elliptic 1 GHz / 60 dB low-pass applied
    /// twice, 40 dB of gain, 10 MHz AC coupling, 11 Vpp gates at 1.25 GHz.
    /// Discriminator latency is calibrated from the synthesized filters.
    pub fn mirc() -> Result<Self> {
        let lpf = synth_lowpass(&FilterSpec::readout_lpf(), FilterFamily::Elliptic)?;
        let mut chain = Self::with_lpf(lpf, 1.25e9);
        chain.calibrate_timing()?;
        Ok(chain)
    }

    /// Chain around an arbitrary low-pass with default front end and an
    /// uncalibrated (zero-latency) discriminator.
    pub fn with_lpf(lpf: FilterDesign, gate_freq_hz: f64) -> Self {
        let period = 1.0 / gate_freq_hz;
        Self {
            lpf,
            lpf_stages: 2,
            amp_gain_db: 40.0,
            gate_freq_hz,
            gate_amplitude_vpp: 11.0,
            bias_voltage_v: 65.0,
            coupling_hz: Some(10e6),
            front_end: FrontEnd::default(),
            timing: Timing {
                latency_s: 0.0,
                window_phase_s: 0.0,
                window_width_s: 0.5 * period,
            },
        }
    }

    /// Identity chain: 0 dB filters, 0 dB amplifier, DC coupled.
    pub fn all_pass(gate_freq_hz: f64) -> Self {
        let mut chain = Self::with_lpf(FilterDesign::identity(), gate_freq_hz);
        chain.amp_gain_db = 0.0;
        chain.coupling_hz = None;
        chain
    }

    pub fn gate_period_s(&self) -> f64 {
        1.0 / self.gate_freq_hz
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gate_freq_hz > 0.0 && self.gate_freq_hz.is_finite()) {
            return Err(Error::invalid("gate_freq_hz", "must be positive"));
        }
        if !self.amp_gain_db.is_finite() {
            return Err(Error::invalid("amp_gain_db", "must be finite"));
        }
        if let Some(fc) = self.coupling_hz {
            if !(fc > 0.0) {
                return Err(Error::invalid("coupling_hz", "must be positive"));
            }
        }
        if self.front_end.samples_per_gate < 10 {
            return Err(Error::invalid(
                "samples_per_gate",
                "need >= 10 samples per gate period",
            ));
        }
        Ok(())
    }

    fn coupling(&self, freq_hz: f64) -> Complex64 {
        match self.coupling_hz {
            Some(fc) => {
                let x = Complex64::new(0.0, freq_hz / fc);
                x / (1.0 + x)
            }
            None => Complex64::new(1.0, 0.0),
        }
    }

    /// Complex end-to-end transfer function at `freq_hz`.
    pub fn transfer(&self, freq_hz: f64) -> Complex64 {
        let lpf = self.lpf.response(freq_hz).powu(self.lpf_stages as u32);
        lpf * 10f64.powf(self.amp_gain_db / 20.0) * self.coupling(freq_hz)
    }

    /// End-to-end gain in dB, summed stage by stage.
    pub fn mag_db(&self, freq_hz: f64) -> f64 {
        self.lpf_stages as f64 * self.lpf.mag_db(freq_hz)
            + self.amp_gain_db
            + to_db(self.coupling(freq_hz).norm())
    }

    /// Measures the delay from avalanche onset to the half-peak crossing of
    /// the filtered pulse and centres the acceptance window on the active
    /// half-cycle.
    pub fn calibrate_timing(&mut self) -> Result<()> {
        let period = self.gate_period_s();
        let onset = 8.0 * period + 0.25 * period;
        let latency = waveform::pulse_crossing_delay(self, onset)?;
        self.timing = Timing {
            latency_s: latency,
            window_phase_s: 0.0,
            window_width_s: 0.5 * period,
        };
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct S21Curve {
    pub freqs_hz: Vec<f64>,
    pub mag_db: Vec<f64>,
}

/// Chain S21 on an ascending, positive frequency grid.
pub fn frequency_response(chain: &ChainConfig, freqs_hz: &[f64]) -> Result<S21Curve> {
    if freqs_hz.iter().any(|f| !(*f > 0.0) || !f.is_finite()) {
        return Err(Error::invalid("freqs", "frequencies must be positive"));
    }
    if freqs_hz.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid(
            "freqs",
            "frequencies must be strictly ascending",
        ));
    }
    Ok(S21Curve {
        freqs_hz: freqs_hz.to_vec(),
        mag_db: freqs_hz.iter().map(|&f| chain.mag_db(f)).collect(),
    })
}

/// Evenly spaced grid on `[start, stop]`.
pub fn linear_grid(start_hz: f64, stop_hz: f64, points: usize) -> Vec<f64> {
    if points < 2 {
        return vec![start_hz];
    }
    let step = (stop_hz - start_hz) / (points - 1) as f64;
    (0..points).map(|i| start_hz + i as f64 * step).collect()
}

pub(crate) fn angular(freq_hz: f64) -> f64 {
    TAU * freq_hz
}
