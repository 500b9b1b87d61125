use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::{
    afterpulse_hazard, Cause, CountsSummary, DetectorParams, EventRecord, GateClock, HoldOffPolicy,
    PhotonSource, SourceSchedule, EPS_TRAP,
};
use crate::error::{Error, Result};
use crate::rng::{geometric_skip, stream, unit_open};

const DARK_STREAM: u64 = 1;
const PHOTON_STREAM: u64 = 2;
const AFTERPULSE_STREAM: u64 = 3;
const FILL_STREAM: u64 = 4;

const NEVER: u64 = u64::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineMode {
    /// Event-driven: each cause draws the gate of its next avalanche directly.
    Fast,
    /// Reference loop visiting every gate.
    Naive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrapMode {
    /// Real-valued expected trap population (deterministic between
    /// avalanches).
    Expected,
    /// Integer population with Poisson fill and binomial release. Only the
    /// naive engine supports it.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunOptions {
    pub mode: EngineMode,
    pub trap_mode: TrapMode,
    /// Maximum number of events kept when recording the event stream.
    pub event_cap: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            mode: EngineMode::Fast,
            trap_mode: TrapMode::Expected,
            event_cap: 10_000_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub summary: CountsSummary,
    pub events: Option<Vec<EventRecord>>,
}

/// One configured detector run.
#[derive(Debug, Clone, Copy)]
pub struct Simulation<'a> {
    pub params: &'a DetectorParams,
    pub clock: &'a GateClock,
    pub source: &'a PhotonSource,
    pub holdoff: &'a HoldOffPolicy,
    pub options: RunOptions,
}

/// Runs `n_gates` gates with default options and optionally collects the
/// event stream.
pub fn run_sequence(
    params: &DetectorParams,
    clock: &GateClock,
    source: &PhotonSource,
    holdoff: &HoldOffPolicy,
    n_gates: u64,
    seed: u64,
    record_events: bool,
) -> Result<RunOutput> {
    Simulation {
        params,
        clock,
        source,
        holdoff,
        options: RunOptions::default(),
    }
    .collect(n_gates, seed, record_events)
}

impl Simulation<'_> {
    fn validate(&self, n_gates: u64) -> Result<()> {
        if n_gates == 0 {
            return Err(Error::invalid("n_gates", "must be >= 1"));
        }
        self.clock.validate()?;
        self.params.validate(self.clock.gate_freq_hz)?;
        self.source.validate()?;
        self.holdoff.validate()?;
        if self.options.mode == EngineMode::Fast && self.options.trap_mode == TrapMode::Exact {
            return Err(Error::invalid(
                "trap_mode",
                "exact trap populations need the naive engine",
            ));
        }
        Ok(())
    }

    pub fn collect(&self, n_gates: u64, seed: u64, record_events: bool) -> Result<RunOutput> {
        if !record_events {
            let summary = self.run(n_gates, seed, |_| Ok(()))?;
            return Ok(RunOutput {
                summary,
                events: None,
            });
        }
        let cap = self.options.event_cap;
        let mut events = Vec::new();
        let summary = self.run(n_gates, seed, |ev| {
            if events.len() >= cap {
                return Err(Error::EventBufferOverflow { cap });
            }
            events.push(*ev);
            Ok(())
        })?;
        Ok(RunOutput {
            summary,
            events: Some(events),
        })
    }

    /// Simulates `n_gates` gates starting at `clock.gate_index`, handing every
    /// avalanche (recorded or not) to `sink` in gate order.
    pub fn run<F>(&self, n_gates: u64, seed: u64, sink: F) -> Result<CountsSummary>
    where
        F: FnMut(&EventRecord) -> Result<()>,
    {
        self.validate(n_gates)?;
        let mut recorder = Recorder {
            clock: *self.clock,
            holdoff_gates: self.holdoff.gates(self.clock.gate_freq_hz),
            holdoff_until: None,
            summary: CountsSummary {
                n_gates,
                ..CountsSummary::default()
            },
            sink,
        };
        match self.options.mode {
            EngineMode::Fast => self.run_fast(n_gates, seed, &mut recorder)?,
            EngineMode::Naive => self.run_naive(n_gates, seed, &mut recorder)?,
        }
        Ok(recorder.summary)
    }

    fn run_fast<F>(&self, n_gates: u64, seed: u64, rec: &mut Recorder<F>) -> Result<()>
    where
        F: FnMut(&EventRecord) -> Result<()>,
    {
        let params = self.params;
        let start = self.clock.gate_index;
        let end = start.saturating_add(n_gates);
        let period = self.clock.period_s();
        let p_dark = (params.dcr_cps() / self.clock.gate_freq_hz).min(1.0);

        let mut dark_rng = stream(seed, DARK_STREAM);
        let mut photons = PhotonProcess::new(
            SourceSchedule::new(params, self.clock, self.source),
            start,
            end,
            stream(seed, PHOTON_STREAM),
        );
        let mut traps = AfterpulseProcess::new(params, period, stream(seed, AFTERPULSE_STREAM));

        let mut next_dark = start.saturating_add(geometric_skip(&mut dark_rng, p_dark));
        let mut next_photon = photons.next_from(start);
        let mut next_after = NEVER;

        loop {
            let gate = next_dark.min(next_photon).min(next_after);
            if gate >= end {
                break;
            }
            let cause = if next_photon == gate {
                Cause::Photon
            } else if next_after == gate {
                Cause::Afterpulse
            } else {
                Cause::Dark
            };
            rec.emit(gate, cause)?;

            if next_dark == gate {
                next_dark = (gate + 1).saturating_add(geometric_skip(&mut dark_rng, p_dark));
            }
            if next_photon == gate {
                next_photon = photons.next_from(gate + 1);
            }
            next_after = traps.refill_and_sample(gate);
        }
        Ok(())
    }

    fn run_naive<F>(&self, n_gates: u64, seed: u64, rec: &mut Recorder<F>) -> Result<()>
    where
        F: FnMut(&EventRecord) -> Result<()>,
    {
        let params = self.params;
        let start = self.clock.gate_index;
        let end = start.saturating_add(n_gates);
        let period = self.clock.period_s();
        let p_dark = (params.dcr_cps() / self.clock.gate_freq_hz).min(1.0);
        let schedule = SourceSchedule::new(params, self.clock, self.source);

        let mut dark_rng = stream(seed, DARK_STREAM);
        let mut photon_rng = stream(seed, PHOTON_STREAM);
        let mut after_rng = stream(seed, AFTERPULSE_STREAM);
        let mut fill_rng = stream(seed, FILL_STREAM);

        let traps = &params.traps;
        let decay = traps.decay_per_gate(period);
        let exact = self.options.trap_mode == TrapMode::Exact;
        let trigger = traps.trigger_probability(params.pde);
        let in_window = -(-params.gate_width_s() / traps.tau_detrap_s).exp_m1();
        let in_gate = -(-period / traps.tau_detrap_s).exp_m1();
        // Conditional probability of a release outside the window given none
        // inside it.
        let outside_given_not_window = ((in_gate - in_window) / (1.0 - in_window)).clamp(0.0, 1.0);
        let fill = if exact && traps.n_fill > 0.0 {
            Some(Poisson::new(traps.n_fill).map_err(|e| Error::invalid("n_fill", e.to_string()))?)
        } else {
            None
        };

        let mut next_pulse = if schedule.is_dark() {
            None
        } else {
            let m = schedule.first_pulse_from(start);
            schedule.pulse(m).map(|(g, p)| (m, g, p))
        };
        let mut population = 0.0f64;

        for gate in start..end {
            let mut photon = false;
            if let Some((m, g, p)) = next_pulse {
                if g == gate {
                    photon = photon_rng.random::<f64>() < p;
                    next_pulse = schedule.pulse(m + 1).map(|(g, p)| (m + 1, g, p));
                }
            }

            let afterpulse = if exact {
                exact_trap_step(
                    &mut population,
                    in_window,
                    outside_given_not_window,
                    trigger,
                    &mut after_rng,
                )
            } else {
                let hazard = afterpulse_hazard(params, population);
                population *= decay;
                hazard >= EPS_TRAP && after_rng.random::<f64>() < -(-hazard).exp_m1()
            };
            let dark = dark_rng.random::<f64>() < p_dark;

            let cause = if photon {
                Cause::Photon
            } else if afterpulse {
                Cause::Afterpulse
            } else if dark {
                Cause::Dark
            } else {
                continue;
            };
            rec.emit(gate, cause)?;
            population += match &fill {
                Some(dist) => dist.sample(&mut fill_rng),
                None => traps.n_fill,
            };
        }
        Ok(())
    }
}

/// Integer trap population update for one gate. Returns whether a released
/// carrier triggered an avalanche.
fn exact_trap_step(
    population: &mut f64,
    in_window: f64,
    outside_given_not_window: f64,
    trigger: f64,
    rng: &mut ChaCha8Rng,
) -> bool {
    let n = *population as u64;
    if n == 0 {
        return false;
    }
    let released_in_window = Binomial::new(n, in_window)
        .map(|b| b.sample(rng))
        .unwrap_or(0);
    let released_elsewhere = Binomial::new(n - released_in_window, outside_given_not_window)
        .map(|b| b.sample(rng))
        .unwrap_or(0);
    *population = (n - released_in_window - released_elsewhere) as f64;
    if released_in_window == 0 || trigger == 0.0 {
        return false;
    }
    let p = 1.0 - (1.0 - trigger).powi(released_in_window.min(i32::MAX as u64) as i32);
    rng.random::<f64>() < p
}

struct Recorder<F> {
    clock: GateClock,
    holdoff_gates: u64,
    holdoff_until: Option<u64>,
    summary: CountsSummary,
    sink: F,
}

impl<F> Recorder<F>
where
    F: FnMut(&EventRecord) -> Result<()>,
{
    fn emit(&mut self, gate: u64, cause: Cause) -> Result<()> {
        let recorded = self.holdoff_until.is_none_or(|until| gate > until);
        if recorded && self.holdoff_gates > 0 {
            self.holdoff_until = Some(gate.saturating_add(self.holdoff_gates));
        }
        let ev = EventRecord {
            gate_index: gate,
            t_s: self.clock.gate_time_s(gate),
            cause,
            recorded,
        };
        self.summary.add(&ev);
        (self.sink)(&ev)
    }
}

/// Photon avalanches: one Bernoulli trial per source pulse. With an integer
/// number of gates per pulse every pulse has the same probability and whole
/// runs of dark pulses are skipped geometrically.
struct PhotonProcess {
    schedule: SourceSchedule,
    end: u64,
    rng: ChaCha8Rng,
}

impl PhotonProcess {
    fn new(schedule: SourceSchedule, _start: u64, end: u64, rng: ChaCha8Rng) -> Self {
        Self { schedule, end, rng }
    }

    fn next_from(&mut self, gate: u64) -> u64 {
        if self.schedule.is_dark() || gate >= self.end {
            return NEVER;
        }
        let mut m = self.schedule.first_pulse_from(gate);
        if self.schedule.periodic().is_some() {
            let Some((_, p)) = self.schedule.pulse(m) else {
                return NEVER;
            };
            let skip = geometric_skip(&mut self.rng, p);
            return match m.checked_add(skip).and_then(|m| self.schedule.pulse(m)) {
                Some((g, _)) => g,
                None => NEVER,
            };
        }
        loop {
            let Some((g, p)) = self.schedule.pulse(m) else {
                return NEVER;
            };
            if g >= self.end {
                return NEVER;
            }
            if p > 0.0 && self.rng.random::<f64>() < p {
                return g;
            }
            m += 1;
        }
    }
}

/// Afterpulses in expected-value trap mode. Between avalanches the
/// population decays deterministically, so the per-gate hazard is
/// `c·r^i` and the gate of the next afterpulse follows from inverting the
/// cumulative hazard `c·(1 - r^i)/(1 - r)` against an Exp(1) draw. Gates
/// whose hazard falls below `EPS_TRAP` are excluded, as in the naive loop.
struct AfterpulseProcess {
    n_fill: f64,
    trigger_window: f64,
    decay_rate_per_gate: f64,
    population: f64,
    population_gate: u64,
    active: bool,
    rng: ChaCha8Rng,
}

impl AfterpulseProcess {
    fn new(params: &DetectorParams, period_s: f64, rng: ChaCha8Rng) -> Self {
        let traps = &params.traps;
        Self {
            n_fill: traps.n_fill,
            trigger_window: afterpulse_hazard(params, 1.0),
            decay_rate_per_gate: period_s / traps.tau_detrap_s,
            population: 0.0,
            population_gate: 0,
            active: !traps.is_zero(),
            rng,
        }
    }

    /// Registers an avalanche in `gate` and returns the gate of the next
    /// afterpulse, or `NEVER`.
    fn refill_and_sample(&mut self, gate: u64) -> u64 {
        if !self.active {
            return NEVER;
        }
        let elapsed = (gate - self.population_gate) as f64;
        let at_gate = self.population * (-elapsed * self.decay_rate_per_gate).exp();
        self.population = at_gate * (-self.decay_rate_per_gate).exp() + self.n_fill;
        self.population_gate = gate + 1;

        let c = self.trigger_window * self.population;
        if c < EPS_TRAP {
            return NEVER;
        }
        let one_minus_r = -(-self.decay_rate_per_gate).exp_m1();
        let ratio = -unit_open(&mut self.rng).ln() * one_minus_r / c;
        if ratio >= 1.0 {
            return NEVER;
        }
        let offset = (-(-ratio).ln_1p() / self.decay_rate_per_gate).floor();
        let cutoff = (c / EPS_TRAP).ln() / self.decay_rate_per_gate;
        if offset > cutoff || offset >= (u64::MAX - self.population_gate) as f64 {
            return NEVER;
        }
        self.population_gate + offset as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{DcrModel, GateWidthModel, TrapModel};

    fn params(dcr: f64, traps: TrapModel) -> DetectorParams {
        DetectorParams {
            temperature_k: 223.0,
            pde: 0.1,
            dcr: DcrModel {
                dcr0_cps: dcr,
                k_pde: 0.0,
            },
            gate_width: GateWidthModel {
                a_s_per_unit_pde: 192e-12,
                b_s: 108e-12,
            },
            traps,
        }
    }

    fn traps() -> TrapModel {
        TrapModel {
            n_fill: 5.0,
            tau_detrap_s: 1e-6,
            p_trigger: 0.2,
            ref_pde: 0.1,
            pde_exponent: 0.0,
        }
    }

    #[test]
    fn infinite_holdoff_records_at_most_one() {
        let p = params(1e6, traps());
        let clock = GateClock::new(1.25e9);
        let out = run_sequence(
            &p,
            &clock,
            &PhotonSource::laser_625khz(1.0),
            &HoldOffPolicy::new(f64::INFINITY),
            10_000_000,
            5,
            false,
        )
        .unwrap();
        assert_eq!(out.summary.recorded.total(), 1);
        assert!(out.summary.unrecorded.total() > 100);
    }

    #[test]
    fn events_are_ordered_and_stamped() {
        let p = params(5e5, traps());
        let clock = GateClock {
            gate_freq_hz: 1.25e9,
            gate_index: 1000,
            phase_offset_s: 100e-12,
        };
        let out = run_sequence(
            &p,
            &clock,
            &PhotonSource::laser_625khz(1.0),
            &HoldOffPolicy::new(100e-9),
            5_000_000,
            9,
            true,
        )
        .unwrap();
        let events = out.events.unwrap();
        assert!(!events.is_empty());
        assert!(events.windows(2).all(|w| w[0].gate_index < w[1].gate_index));
        assert!(events
            .iter()
            .all(|e| e.gate_index >= 1000 && e.gate_index < 5_001_000));
        for e in &events {
            let expected = e.gate_index as f64 * 0.8e-9 + 100e-12;
            assert!((e.t_s - expected).abs() < 1e-15 * e.t_s.max(1.0));
        }
        assert_eq!(events.len() as u64, out.summary.total_avalanches());
    }

    #[test]
    fn holdoff_suppresses_following_gates() {
        let p = params(5e5, traps());
        let clock = GateClock::new(1.25e9);
        let out = run_sequence(
            &p,
            &clock,
            &PhotonSource::laser_625khz(1.0),
            &HoldOffPolicy::new(100e-9),
            20_000_000,
            3,
            true,
        )
        .unwrap();
        let mut last_recorded: Option<u64> = None;
        for e in out.events.unwrap() {
            match last_recorded {
                Some(r) if e.gate_index <= r + 125 => assert!(!e.recorded),
                _ => assert!(e.recorded),
            }
            if e.recorded {
                last_recorded = Some(e.gate_index);
            }
        }
    }

    #[test]
    fn event_cap_overflow() {
        let p = params(1e8, TrapModel::zeroed());
        let sim = Simulation {
            params: &p,
            clock: &GateClock::new(1.25e9),
            source: &PhotonSource::off(),
            holdoff: &HoldOffPolicy::new(0.0),
            options: RunOptions {
                event_cap: 10,
                ..RunOptions::default()
            },
        };
        let err = sim.collect(1_000_000, 1, true).unwrap_err();
        assert!(matches!(err, Error::EventBufferOverflow { cap: 10 }));
        assert!(sim.collect(1_000_000, 1, false).is_ok());
    }

    #[test]
    fn exact_traps_require_naive_engine() {
        let p = params(100.0, traps());
        let mut sim = Simulation {
            params: &p,
            clock: &GateClock::new(1.25e9),
            source: &PhotonSource::off(),
            holdoff: &HoldOffPolicy::new(0.0),
            options: RunOptions {
                trap_mode: TrapMode::Exact,
                ..RunOptions::default()
            },
        };
        assert!(sim.collect(1000, 1, false).is_err());
        sim.options.mode = EngineMode::Naive;
        assert!(sim.collect(1000, 1, false).is_ok());
    }

    #[test]
    fn zero_gates_rejected() {
        let p = params(100.0, TrapModel::zeroed());
        let err = run_sequence(
            &p,
            &GateClock::new(1.25e9),
            &PhotonSource::off(),
            &HoldOffPolicy::new(0.0),
            0,
            1,
            false,
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::InvalidParameter {
                name: "n_gates",
                ..
            }
        ));
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let p = params(2e5, traps());
        let clock = GateClock::new(1.25e9);
        let src = PhotonSource::laser_625khz(1.0);
        let h = HoldOffPolicy::new(100e-9);
        for mode in [EngineMode::Fast, EngineMode::Naive] {
            let sim = Simulation {
                params: &p,
                clock: &clock,
                source: &src,
                holdoff: &h,
                options: RunOptions {
                    mode,
                    ..RunOptions::default()
                },
            };
            let a = sim.collect(2_000_000, 77, true).unwrap();
            let b = sim.collect(2_000_000, 77, true).unwrap();
            assert_eq!(a, b);
        }
    }
}
