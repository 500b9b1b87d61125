//! Gate-resolved stochastic model of the sine-wave-gated SPAD.
//!
//! Every gate can host at most one avalanche, caused by a photon (on gates
//! that receive a source pulse), a dark carrier, or a carrier released from
//! a trap filled by an earlier avalanche. Recorded avalanches start a
//! count-off hold-off during which later avalanches still occur (and still
//! fill traps) but are not recorded.

mod params;
mod run;

use serde::{Deserialize, Serialize};

pub use params::{
    gate_transmission, set_delay, DcrModel, DetectorParams, GateClock, GateWidthModel,
    HoldOffPolicy, PhotonSource, TrapModel, EPS_TRAP,
};
pub use run::{run_sequence, EngineMode, RunOptions, RunOutput, Simulation, TrapMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cause {
    Photon,
    Dark,
    Afterpulse,
}

/// One avalanche with its ground-truth cause. `t_s` is the peak time of the
/// gate it occurred in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub gate_index: u64,
    pub t_s: f64,
    pub cause: Cause,
    pub recorded: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CauseCounts {
    pub photon: u64,
    pub dark: u64,
    pub afterpulse: u64,
}

impl CauseCounts {
    pub fn total(&self) -> u64 {
        self.photon + self.dark + self.afterpulse
    }

    fn bump(&mut self, cause: Cause) {
        match cause {
            Cause::Photon => self.photon += 1,
            Cause::Dark => self.dark += 1,
            Cause::Afterpulse => self.afterpulse += 1,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountsSummary {
    pub n_gates: u64,
    pub recorded: CauseCounts,
    pub unrecorded: CauseCounts,
}

impl CountsSummary {
    pub fn total_avalanches(&self) -> u64 {
        self.recorded.total() + self.unrecorded.total()
    }

    pub(crate) fn add(&mut self, ev: &EventRecord) {
        if ev.recorded {
            self.recorded.bump(ev.cause);
        } else {
            self.unrecorded.bump(ev.cause);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineState {
    /// Filled traps at the start of gate `gate_index` (expected value, or an
    /// integer count in exact mode).
    pub trap_population: f64,
    /// Last gate still inside the hold-off of the most recent recorded
    /// avalanche.
    pub holdoff_until_gate: Option<u64>,
    pub gate_index: u64,
}

impl EngineState {
    pub fn fresh(gate_index: u64) -> Self {
        Self {
            trap_population: 0.0,
            holdoff_until_gate: None,
            gate_index,
        }
    }
}

/// Advances the expected-value trap population across one gate: decay by
/// `exp(-T/τ)`, then add `n_fill` if the gate avalanched (recorded or not).
pub fn trap_update(
    state: &EngineState,
    avalanche_occurred: bool,
    traps: &TrapModel,
    gate_period_s: f64,
) -> EngineState {
    let mut population = state.trap_population * traps.decay_per_gate(gate_period_s);
    if avalanche_occurred {
        population += traps.n_fill;
    }
    EngineState {
        trap_population: population,
        gate_index: state.gate_index + 1,
        ..*state
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateProbabilities {
    pub photon: f64,
    pub dark: f64,
    pub afterpulse: f64,
}

/// Expected releases from `population` filled traps that land inside one
/// gate's active window of width `Δt`, times the trigger probability.
pub(crate) fn afterpulse_hazard(params: &DetectorParams, population: f64) -> f64 {
    let traps = &params.traps;
    let in_window = -(-params.gate_width_s() / traps.tau_detrap_s).exp_m1();
    traps.trigger_probability(params.pde) * population * in_window
}

pub fn per_gate_probabilities(
    params: &DetectorParams,
    clock: &GateClock,
    source: &PhotonSource,
    state: &EngineState,
    gate_index: u64,
) -> GateProbabilities {
    let schedule = SourceSchedule::new(params, clock, source);
    let hazard = afterpulse_hazard(params, state.trap_population);
    GateProbabilities {
        photon: schedule.prob_at_gate(gate_index),
        dark: (params.dcr_cps() / clock.gate_freq_hz).min(1.0),
        afterpulse: if hazard < EPS_TRAP {
            0.0
        } else {
            -(-hazard).exp_m1()
        },
    }
}

/// Maps source pulses onto gates. Each pulse is assigned to the single
/// nearest gate peak; its detection probability follows the gate profile at
/// the residual delay.
#[derive(Debug, Clone)]
pub(crate) struct SourceSchedule {
    gates_per_pulse: f64,
    /// Exact integer gates per pulse, when the source rate divides the gate
    /// rate.
    periodic: Option<u64>,
    offset_gates: f64,
    mu_eta: f64,
    width_s: f64,
    sigma_s: f64,
    period_s: f64,
}

impl SourceSchedule {
    pub(crate) fn new(params: &DetectorParams, clock: &GateClock, source: &PhotonSource) -> Self {
        let d = clock.gate_freq_hz / source.rep_rate_hz;
        let periodic = ((d - d.round()).abs() <= 1e-9 * d && d >= 1.0).then(|| d.round() as u64);
        Self {
            gates_per_pulse: d,
            periodic,
            offset_gates: clock.phase_offset_s / clock.period_s(),
            mu_eta: source.mu * params.pde,
            width_s: params.gate_width_s(),
            sigma_s: source.pulse_sigma_s,
            period_s: clock.period_s(),
        }
    }

    pub(crate) fn is_dark(&self) -> bool {
        self.mu_eta == 0.0
    }

    pub(crate) fn periodic(&self) -> Option<u64> {
        self.periodic
    }

    /// Gate receiving pulse `m` (possibly negative) and the pulse's delay
    /// from that gate's peak in gate periods.
    fn placement(&self, m: u64) -> (i64, f64) {
        if let Some(d) = self.periodic {
            let shift = (-self.offset_gates).round();
            let gate = (m * d) as i64 + shift as i64;
            (gate, -shift - self.offset_gates)
        } else {
            let x = m as f64 * self.gates_per_pulse - self.offset_gates;
            let gate = x.round();
            (gate as i64, x - gate)
        }
    }

    fn prob_for_delay(&self, delay_gates: f64) -> f64 {
        let g = gate_transmission(delay_gates * self.period_s, self.width_s, self.sigma_s);
        -(-self.mu_eta * g).exp_m1()
    }

    /// Gate index and detection probability of pulse `m`; `None` for pulses
    /// landing before gate 0.
    pub(crate) fn pulse(&self, m: u64) -> Option<(u64, f64)> {
        let (gate, delay) = self.placement(m);
        (gate >= 0).then(|| (gate as u64, self.prob_for_delay(delay)))
    }

    /// First pulse whose gate is `>= gate`.
    pub(crate) fn first_pulse_from(&self, gate: u64) -> u64 {
        let approx = ((gate as f64 + self.offset_gates) / self.gates_per_pulse - 2.0).max(0.0);
        let mut m = approx.floor() as u64;
        while self.placement(m).0 < gate as i64 {
            m += 1;
        }
        m
    }

    /// True if `gate` is the gate assigned to some source pulse.
    pub(crate) fn is_pulse_gate(&self, gate: u64) -> bool {
        let m = self.first_pulse_from(gate);
        matches!(self.pulse(m), Some((g, _)) if g == gate)
    }

    pub(crate) fn prob_at_gate(&self, gate: u64) -> f64 {
        if self.is_dark() {
            return 0.0;
        }
        let m = self.first_pulse_from(gate);
        match self.pulse(m) {
            Some((g, p)) if g == gate => p,
            _ => 0.0,
        }
    }
}
