use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::run_counts;
use crate::engine::{DetectorParams, GateClock, HoldOffPolicy, PhotonSource, RunOptions};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DcrPdePoint {
    pub pde: f64,
    pub dcr_cps: f64,
    pub dcr_per_gate: f64,
    pub duty_cycle: f64,
    pub dcr_normalized_cps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcrCurve {
    pub temperature_k: f64,
    pub points: Vec<DcrPdePoint>,
}

/// Builds a point from a recorded dark count over `n_gates` gates. The rate
/// is derived from the per-gate value so that `dcr_per_gate·f_g` reproduces
/// `dcr_cps` exactly.
pub fn dcr_point(
    params: &DetectorParams,
    gate_freq_hz: f64,
    counts: u64,
    n_gates: u64,
) -> DcrPdePoint {
    let dcr_per_gate = counts as f64 / n_gates as f64;
    let dcr_cps = dcr_per_gate * gate_freq_hz;
    let duty_cycle = params.gate_width_s() * gate_freq_hz;
    DcrPdePoint {
        pde: params.pde,
        dcr_cps,
        dcr_per_gate,
        duty_cycle,
        dcr_normalized_cps: dcr_cps / duty_cycle,
    }
}

/// Dark count rate versus detection efficiency for every preset, with the
/// source off. Grid points run concurrently on derived seeds.
pub fn dcr_pde_curve(
    presets: &[DetectorParams],
    pde_grid: &[f64],
    gates_per_point: u64,
    clock: &GateClock,
    holdoff: &HoldOffPolicy,
    options: RunOptions,
    seed: u64,
) -> Result<Vec<DcrCurve>> {
    if gates_per_point == 0 {
        return Err(Error::invalid("gates_per_point", "must be >= 1"));
    }
    let jobs: Vec<(usize, usize)> = (0..presets.len())
        .flat_map(|t| (0..pde_grid.len()).map(move |i| (t, i)))
        .collect();
    let points = jobs
        .par_iter()
        .enumerate()
        .map(|(job, &(t, i))| {
            let params = presets[t].with_pde(pde_grid[i]);
            let summary = run_counts(
                &params,
                clock,
                &PhotonSource::off(),
                holdoff,
                gates_per_point,
                derive_seed(seed, job as u64),
                options,
            )?;
            Ok(dcr_point(
                &params,
                clock.gate_freq_hz,
                summary.recorded.total(),
                gates_per_point,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut points = points.into_iter();
    Ok(presets
        .iter()
        .map(|p| DcrCurve {
            temperature_k: p.temperature_k,
            points: points.by_ref().take(pde_grid.len()).collect(),
        })
        .collect())
}

/// Total avalanche rate (recorded or not) of a trap-free detector under each
/// gating/hold-off configuration. With a fixed seed these agree for every
/// hold-off at a given gate frequency: the dark rate is a property of the
/// diode, not of the quenching electronics.
pub fn dark_avalanche_rates(
    params: &DetectorParams,
    configs: &[(GateClock, HoldOffPolicy)],
    duration_s: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    if !params.traps.is_zero() {
        return Err(Error::invalid(
            "traps",
            "invariance holds only without afterpulsing",
        ));
    }
    configs
        .iter()
        .map(|(clock, holdoff)| {
            let n_gates = (duration_s * clock.gate_freq_hz).round().max(1.0) as u64;
            let summary = run_counts(
                params,
                clock,
                &PhotonSource::off(),
                holdoff,
                n_gates,
                seed,
                RunOptions::default(),
            )?;
            Ok(summary.total_avalanches() as f64 / (n_gates as f64 / clock.gate_freq_hz))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{DcrModel, GateWidthModel, TrapModel};

    fn params(dcr0: f64) -> DetectorParams {
        DetectorParams {
            temperature_k: 223.0,
            pde: 0.1,
            dcr: DcrModel {
                dcr0_cps: dcr0,
                k_pde: 10.6,
            },
            gate_width: GateWidthModel {
                a_s_per_unit_pde: 192e-12,
                b_s: 108e-12,
            },
            traps: TrapModel::zeroed(),
        }
    }

    #[test]
    fn identities_hold_per_point() {
        let curves = dcr_pde_curve(
            &[params(5e4)],
            &[0.05, 0.1, 0.2],
            10_000_000,
            &GateClock::new(1.25e9),
            &HoldOffPolicy::new(100e-9),
            RunOptions::default(),
            3,
        )
        .unwrap();
        for p in &curves[0].points {
            assert_eq!(p.dcr_per_gate * 1.25e9, p.dcr_cps);
            assert!(p.duty_cycle > 0.0 && p.duty_cycle < 1.0);
            assert!(p.dcr_normalized_cps >= p.dcr_cps);
            let back = p.dcr_normalized_cps * p.duty_cycle;
            assert!((back - p.dcr_cps).abs() <= 2.0 * f64::EPSILON * p.dcr_cps);
        }
    }

    #[test]
    fn zero_dark_rate_gives_zero_curve() {
        let curves = dcr_pde_curve(
            &[params(0.0)],
            &[0.1, 0.2],
            1_000_000,
            &GateClock::new(1.25e9),
            &HoldOffPolicy::new(0.0),
            RunOptions::default(),
            1,
        )
        .unwrap();
        assert!(curves[0]
            .points
            .iter()
            .all(|p| p.dcr_cps == 0.0 && p.dcr_normalized_cps == 0.0));
    }

    #[test]
    fn dark_rate_ignores_holdoff() {
        let c = GateClock::new(1.25e9);
        let rates = dark_avalanche_rates(
            &params(1e6),
            &[
                (c, HoldOffPolicy::new(0.0)),
                (c, HoldOffPolicy::new(100e-9)),
                (c, HoldOffPolicy::new(10e-6)),
            ],
            0.01,
            4,
        )
        .unwrap();
        assert_eq!(rates[0], rates[1]);
        assert_eq!(rates[0], rates[2]);
    }
}
