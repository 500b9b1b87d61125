use std::f64::consts::LN_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gate-resolved hazards below this many expected trap releases are treated
/// as zero; the induced error is below `n_gates · EPS_TRAP` events.
pub const EPS_TRAP: f64 = 1e-12;

/// `DCR(η) = dcr0 · exp(k_pde · η)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcrModel {
    pub dcr0_cps: f64,
    pub k_pde: f64,
}

impl DcrModel {
    pub fn rate_cps(&self, pde: f64) -> f64 {
        self.dcr0_cps * (self.k_pde * pde).exp()
    }
}

/// Effective gating width `Δt(η) = a·η + b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateWidthModel {
    pub a_s_per_unit_pde: f64,
    pub b_s: f64,
}

impl GateWidthModel {
    pub fn width_s(&self, pde: f64) -> f64 {
        self.a_s_per_unit_pde * pde + self.b_s
    }
}

/// Single-exponential trap model.
///
/// Each avalanche fills `n_fill` traps on average; filled traps empty with
/// time constant `tau_detrap_s`, and a carrier released inside the active
/// part of a gate triggers an avalanche with probability
/// `p_trigger · (η / ref_pde)^pde_exponent` (capped at 1), so the trigger
/// probability tracks the excess bias the same way the detection efficiency
/// does.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapModel {
    pub n_fill: f64,
    pub tau_detrap_s: f64,
    pub p_trigger: f64,
    #[serde(default = "default_ref_pde")]
    pub ref_pde: f64,
    #[serde(default)]
    pub pde_exponent: f64,
}

fn default_ref_pde() -> f64 {
    0.1
}

impl TrapModel {
    pub fn zeroed() -> Self {
        Self {
            n_fill: 0.0,
            tau_detrap_s: 1e-6,
            p_trigger: 0.0,
            ref_pde: default_ref_pde(),
            pde_exponent: 0.0,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.n_fill == 0.0 || self.p_trigger == 0.0
    }

    pub fn trigger_probability(&self, pde: f64) -> f64 {
        if self.pde_exponent == 0.0 {
            return self.p_trigger;
        }
        (self.p_trigger * (pde / self.ref_pde).powf(self.pde_exponent)).min(1.0)
    }

    /// Per-gate survival factor `exp(-T/τ)`.
    pub fn decay_per_gate(&self, gate_period_s: f64) -> f64 {
        (-gate_period_s / self.tau_detrap_s).exp()
    }
}

/// Calibrated model of one SPAD at one temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub temperature_k: f64,
    pub pde: f64,
    pub dcr: DcrModel,
    pub gate_width: GateWidthModel,
    pub traps: TrapModel,
}

impl DetectorParams {
    pub fn with_pde(mut self, pde: f64) -> Self {
        self.pde = pde;
        self
    }

    pub fn with_traps(mut self, traps: TrapModel) -> Self {
        self.traps = traps;
        self
    }

    pub fn dcr_cps(&self) -> f64 {
        self.dcr.rate_cps(self.pde)
    }

    pub fn gate_width_s(&self) -> f64 {
        self.gate_width.width_s(self.pde)
    }

    pub fn validate(&self, gate_freq_hz: f64) -> Result<()> {
        if !(self.temperature_k > 0.0) {
            return Err(Error::invalid("temperature_k", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.pde) {
            return Err(Error::invalid("pde", format!("{} not in [0, 1]", self.pde)));
        }
        if !(self.dcr.dcr0_cps >= 0.0 && self.dcr.dcr0_cps.is_finite()) {
            return Err(Error::invalid("dcr0_cps", "must be finite and >= 0"));
        }
        if !self.dcr.k_pde.is_finite() {
            return Err(Error::invalid("k_pde", "must be finite"));
        }
        let period = 1.0 / gate_freq_hz;
        let width = self.gate_width_s();
        if !(width > 0.0 && width < period) {
            return Err(Error::invalid(
                "gate_width",
                format!("Δt({}) = {width:e} s not in (0, {period:e}) s", self.pde),
            ));
        }
        let t = &self.traps;
        if !(t.n_fill >= 0.0 && t.n_fill.is_finite()) {
            return Err(Error::invalid("n_fill", "must be finite and >= 0"));
        }
        if !(t.tau_detrap_s > 0.0 && t.tau_detrap_s.is_finite()) {
            return Err(Error::invalid("tau_detrap_s", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&t.p_trigger) {
            return Err(Error::invalid("p_trigger", "must lie in [0, 1]"));
        }
        if !(t.ref_pde > 0.0 && t.ref_pde <= 1.0) {
            return Err(Error::invalid("ref_pde", "must lie in (0, 1]"));
        }
        if !t.pde_exponent.is_finite() {
            return Err(Error::invalid("pde_exponent", "must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateClock {
    pub gate_freq_hz: f64,
    /// Index of the first simulated gate.
    pub gate_index: u64,
    /// Delay of the gate peaks relative to the source pulses.
    pub phase_offset_s: f64,
}

impl GateClock {
    pub fn new(gate_freq_hz: f64) -> Self {
        Self {
            gate_freq_hz,
            gate_index: 0,
            phase_offset_s: 0.0,
        }
    }

    pub fn period_s(&self) -> f64 {
        1.0 / self.gate_freq_hz
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gate_freq_hz > 0.0 && self.gate_freq_hz.is_finite()) {
            return Err(Error::invalid("gate_freq_hz", "must be positive"));
        }
        if !(self.phase_offset_s >= 0.0 && self.phase_offset_s < self.period_s()) {
            return Err(Error::invalid(
                "phase_offset_s",
                "must lie in [0, gate period)",
            ));
        }
        Ok(())
    }

    /// Peak time of gate `index`.
    pub fn gate_time_s(&self, index: u64) -> f64 {
        index as f64 * self.period_s() + self.phase_offset_s
    }
}

/// Returns `clock` with its phase shifter set to `phase_offset_s`.
pub fn set_delay(clock: &GateClock, phase_offset_s: f64) -> Result<GateClock> {
    let updated = GateClock {
        phase_offset_s,
        ..*clock
    };
    updated.validate()?;
    Ok(updated)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhotonSource {
    pub rep_rate_hz: f64,
    pub mu: f64,
    pub pulse_sigma_s: f64,
}

impl PhotonSource {
    /// 625 kHz laser with one photon per pulse on average.
    pub fn laser_625khz(mu: f64) -> Self {
        Self {
            rep_rate_hz: 625e3,
            mu,
            pulse_sigma_s: 0.0,
        }
    }

    pub fn off() -> Self {
        Self::laser_625khz(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rep_rate_hz > 0.0 && self.rep_rate_hz.is_finite()) {
            return Err(Error::invalid("rep_rate_hz", "must be positive"));
        }
        if !(self.mu >= 0.0 && self.mu.is_finite()) {
            return Err(Error::invalid("mu", "must be finite and >= 0"));
        }
        if !(self.pulse_sigma_s >= 0.0) {
            return Err(Error::invalid("pulse_sigma_s", "must be >= 0"));
        }
        Ok(())
    }
}

/// Count-off hold-off: the detector keeps gating, and avalanches within
/// `holdoff_s` after a recorded one still happen but are not recorded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HoldOffPolicy {
    pub holdoff_s: f64,
}

impl HoldOffPolicy {
    pub fn new(holdoff_s: f64) -> Self {
        Self { holdoff_s }
    }

    pub fn gates(&self, gate_freq_hz: f64) -> u64 {
        let g = (self.holdoff_s * gate_freq_hz).round();
        if g >= u64::MAX as f64 {
            u64::MAX
        } else {
            g as u64
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.holdoff_s >= 0.0) {
            return Err(Error::invalid("holdoff_s", "must be >= 0"));
        }
        Ok(())
    }
}

/// Gate transmission for a source pulse `delay_s` away from the gate peak:
/// a Gaussian of FWHM `width_s` (peak 1), broadened by a Gaussian pulse of
/// standard deviation `pulse_sigma_s` with its area preserved.
pub fn gate_transmission(delay_s: f64, width_s: f64, pulse_sigma_s: f64) -> f64 {
    let sg = width_s / (2.0 * (2.0 * LN_2).sqrt());
    let var = sg * sg + pulse_sigma_s * pulse_sigma_s;
    (sg / var.sqrt()) * (-delay_s * delay_s / (2.0 * var)).exp()
}
