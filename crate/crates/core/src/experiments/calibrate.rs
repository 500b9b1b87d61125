use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::afterpulse::{afterpulse_measurement, AfterpulseSettings};
use super::run_counts;
use crate::engine::{
    DcrModel, DetectorParams, GateClock, GateWidthModel, HoldOffPolicy, PhotonSource, RunOptions,
    TrapModel,
};
use crate::error::{Error, Result};
use crate::rng::derive_seed;

/// Least-squares fit of `ln DCR = ln dcr0 + k·η`; exact through two points.
pub fn calibrate_dcr(targets: &[(f64, f64)]) -> Result<DcrModel> {
    if targets.len() < 2 {
        return Err(Error::Degenerate(
            "need at least two (pde, dcr) targets".into(),
        ));
    }
    if let Some(&(_, d)) = targets.iter().find(|(_, d)| !(*d > 0.0 && d.is_finite())) {
        return Err(Error::invalid(
            "dcr_cps",
            format!("target {d} must be positive"),
        ));
    }
    let (k, ln_d0) = linear_fit(targets.iter().map(|&(p, d)| (p, d.ln())))
        .ok_or_else(|| Error::Degenerate("all targets share the same pde".into()))?;
    Ok(DcrModel {
        dcr0_cps: ln_d0.exp(),
        k_pde: k,
    })
}

/// Gate-width model from pairs of raw and duty-cycle-normalized dark rates:
/// each pair gives `Δt = dcr / (dcr_normalized · f_g)`. One point yields a
/// constant width.
pub fn calibrate_gate_width(
    points: &[(f64, f64, f64)],
    gate_freq_hz: f64,
) -> Result<GateWidthModel> {
    let widths: Vec<(f64, f64)> = points
        .iter()
        .map(|&(pde, dcr, norm)| (pde, dcr / (norm * gate_freq_hz)))
        .collect();
    match widths.as_slice() {
        [] => Err(Error::Degenerate("no gate-width points".into())),
        [(_, w)] => Ok(GateWidthModel {
            a_s_per_unit_pde: 0.0,
            b_s: *w,
        }),
        _ => {
            let (a, b) = linear_fit(widths.iter().copied())
                .ok_or_else(|| Error::Degenerate("all points share the same pde".into()))?;
            Ok(GateWidthModel {
                a_s_per_unit_pde: a,
                b_s: b,
            })
        }
    }
}

/// Slope and intercept of an ordinary least-squares line, or `None` when all
/// abscissae coincide.
fn linear_fit(points: impl Iterator<Item = (f64, f64)> + Clone) -> Option<(f64, f64)> {
    let n = points.clone().count() as f64;
    let mx = points.clone().map(|p| p.0).sum::<f64>() / n;
    let my = points.clone().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.clone().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 1e-12 * mx.abs().max(1.0).powi(2) {
        return None;
    }
    let sxy: f64 = points.map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    Some((slope, my - slope * mx))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapTarget {
    pub pde: f64,
    pub temperature_k: f64,
    pub holdoff_s: f64,
    pub p_ap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapCalibration {
    pub tau_grid_s: Vec<f64>,
    /// Trigger probability at the reference efficiency; the fill absorbs the
    /// rest of the fitted product.
    pub p_trigger: f64,
    /// Largest accepted relative deviation from any target.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub settings: AfterpulseSettings,
}

impl Default for TrapCalibration {
    fn default() -> Self {
        Self {
            tau_grid_s: vec![0.5e-6, 1e-6, 2e-6],
            p_trigger: 0.1,
            tolerance: 0.15,
            max_iterations: 12,
            settings: AfterpulseSettings {
                acquisition_s: 8.0,
                ..AfterpulseSettings::standard(HoldOffPolicy::new(100e-9))
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibratedTraps {
    pub temperature_k: f64,
    pub traps: TrapModel,
    /// Worst relative deviation from this temperature's targets.
    pub residual: f64,
}

/// Stop refining once every target is matched this closely.
const CONVERGED: f64 = 0.02;

fn same_temperature(a: f64, b: f64) -> bool {
    (a - b).abs() < 0.5
}

/// Fits a trap model per temperature.
///
/// For every detrapping constant on the grid, the product `n_fill·p_trigger`
/// is solved against the lowest-efficiency target by fixed-point iteration
/// on the simulated afterpulse probability (common random numbers across
/// iterations). When a temperature has targets at two or more efficiencies
/// the efficiency exponent of the trigger probability is solved against the
/// highest one at the same time; other temperatures reuse the first fitted
/// exponent. Of the grid points within tolerance, the shortest detrapping
/// time wins.
pub fn calibrate_traps(
    base: &[DetectorParams],
    clock: &GateClock,
    source: &PhotonSource,
    targets: &[TrapTarget],
    cal: &TrapCalibration,
    seed: u64,
) -> Result<Vec<CalibratedTraps>> {
    if cal.tau_grid_s.is_empty() || cal.tau_grid_s.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::invalid(
            "tau_grid_s",
            "need positive detrapping times",
        ));
    }
    if !(cal.p_trigger > 0.0 && cal.p_trigger <= 1.0) {
        return Err(Error::invalid("p_trigger", "must lie in (0, 1]"));
    }
    if let Some(t) = targets.iter().find(|t| !(t.p_ap >= 0.0 && t.p_ap < 1.0)) {
        return Err(Error::invalid(
            "p_ap",
            format!("target {} not in [0, 1)", t.p_ap),
        ));
    }

    let mut temps: Vec<(DetectorParams, Vec<TrapTarget>)> = Vec::new();
    for params in base {
        let own: Vec<TrapTarget> = targets
            .iter()
            .filter(|t| same_temperature(t.temperature_k, params.temperature_k))
            .copied()
            .collect();
        if own.is_empty() {
            return Err(Error::invalid(
                "targets",
                format!("no afterpulse target at {} K", params.temperature_k),
            ));
        }
        temps.push((*params, own));
    }
    if let Some(t) = targets.iter().find(|t| {
        !base
            .iter()
            .any(|p| same_temperature(p.temperature_k, t.temperature_k))
    }) {
        return Err(Error::invalid(
            "targets",
            format!("no base parameters for {} K", t.temperature_k),
        ));
    }

    let distinct_pdes = |ts: &[TrapTarget]| {
        let lo = ts.iter().map(|t| t.pde).fold(f64::INFINITY, f64::min);
        ts.iter().any(|t| (t.pde - lo).abs() > 1e-9)
    };
    let mut order: Vec<usize> = (0..temps.len()).collect();
    order.sort_by_key(|&i| !distinct_pdes(&temps[i].1));

    let mut shared_exponent: Option<f64> = None;
    let mut out = vec![None; temps.len()];
    for i in order {
        let (params, own) = &temps[i];
        let fit_exponent = distinct_pdes(own);
        let exponent = if fit_exponent { None } else { shared_exponent };
        let fitted = calibrate_one(
            params,
            clock,
            source,
            own,
            cal,
            exponent,
            derive_seed(seed, i as u64),
        )?;
        if fit_exponent && shared_exponent.is_none() {
            shared_exponent = Some(fitted.traps.pde_exponent);
        }
        out[i] = Some(fitted);
    }
    Ok(out
        .into_iter()
        .map(|c| c.expect("every temperature calibrated"))
        .collect())
}

fn calibrate_one(
    params: &DetectorParams,
    clock: &GateClock,
    source: &PhotonSource,
    targets: &[TrapTarget],
    cal: &TrapCalibration,
    exponent: Option<f64>,
    seed: u64,
) -> Result<CalibratedTraps> {
    let anchor = *targets
        .iter()
        .min_by(|a, b| a.pde.total_cmp(&b.pde))
        .expect("non-empty targets");
    let high = *targets
        .iter()
        .max_by(|a, b| a.pde.total_cmp(&b.pde))
        .expect("non-empty targets");
    let fit_exponent = exponent.is_none() && (high.pde - anchor.pde).abs() > 1e-9;

    if targets.iter().all(|t| t.p_ap == 0.0) {
        return Ok(CalibratedTraps {
            temperature_k: params.temperature_k,
            traps: TrapModel {
                n_fill: 0.0,
                tau_detrap_s: cal.tau_grid_s[0],
                p_trigger: cal.p_trigger,
                ref_pde: anchor.pde,
                pde_exponent: exponent.unwrap_or(0.0),
            },
            residual: 0.0,
        });
    }

    let measure = |traps: TrapModel, t: &TrapTarget, k: u64| -> Result<f64> {
        let settings = AfterpulseSettings {
            holdoff: HoldOffPolicy::new(t.holdoff_s),
            ..cal.settings
        };
        let p = params.with_pde(t.pde).with_traps(traps);
        Ok(
            afterpulse_measurement(&p, clock, source, &settings, derive_seed(seed, k))?
                .1
                .p_ap,
        )
    };
    let residual = |traps: TrapModel| -> Result<f64> {
        targets
            .iter()
            .enumerate()
            .map(|(k, t)| {
                let m = measure(traps, t, k as u64)?;
                Ok(if t.p_ap > 0.0 {
                    ((m - t.p_ap) / t.p_ap).abs()
                } else {
                    m
                })
            })
            .try_fold(0.0f64, |acc, r: Result<f64>| Ok(acc.max(r?)))
    };
    let anchor_idx = targets.iter().position(|t| *t == anchor).unwrap_or(0) as u64;
    let high_idx = targets.iter().position(|t| *t == high).unwrap_or(0) as u64;

    let candidates = cal
        .tau_grid_s
        .par_iter()
        .map(|&tau| -> Result<(TrapModel, f64)> {
            let window = params.with_pde(anchor.pde).gate_width_s();
            let period = clock.period_s();
            let q_w = -(-window / tau).exp_m1();
            let r = (-period / tau).exp();
            let h = HoldOffPolicy::new(anchor.holdoff_s).gates(clock.gate_freq_hz) as f64;
            let w = (cal.settings.window_s / period).round();
            let first_gen = q_w * (r.powf(h) - r.powf(w)) / (1.0 - r);
            let mut product = anchor.p_ap / first_gen.max(1e-300);
            let mut kappa = exponent.unwrap_or(0.0);
            let model = |product: f64, kappa: f64| TrapModel {
                n_fill: product / cal.p_trigger,
                tau_detrap_s: tau,
                p_trigger: cal.p_trigger,
                ref_pde: anchor.pde,
                pde_exponent: kappa,
            };
            for _ in 0..cal.max_iterations {
                let m = measure(model(product, kappa), &anchor, anchor_idx)?;
                product *= if m > 0.0 {
                    (anchor.p_ap / m).clamp(0.25, 4.0)
                } else {
                    4.0
                };
                if fit_exponent {
                    let mh = measure(model(product, kappa), &high, high_idx)?;
                    let step = if mh > 0.0 { (high.p_ap / mh).ln() } else { 1.0 };
                    kappa += step.clamp(-1.0, 1.0) / (high.pde / anchor.pde).ln();
                }
                if residual(model(product, kappa))? < CONVERGED {
                    break;
                }
            }
            let traps = model(product, kappa);
            Ok((traps, residual(traps)?))
        })
        .collect::<Result<Vec<_>>>()?;

    // Targets at a single hold-off barely constrain the detrapping time, so
    // the fastest acceptable detrapping wins; it leaves the least afterpulsing
    // at long hold-offs.
    let best = candidates.iter().map(|c| c.1).fold(f64::INFINITY, f64::min);
    let Some(&(traps, residual)) = candidates
        .iter()
        .filter(|c| c.1 <= cal.tolerance)
        .min_by(|a, b| a.0.tau_detrap_s.total_cmp(&b.0.tau_detrap_s))
    else {
        return Err(Error::UnreachableTarget {
            temperature_k: params.temperature_k,
            best_residual: best,
        });
    };
    Ok(CalibratedTraps {
        temperature_k: params.temperature_k,
        traps,
        residual,
    })
}

/// Dark-count targets of one temperature, as measured (afterpulses included).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DcrTargets {
    pub temperature_k: f64,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PresetTargets {
    pub gate_width: GateWidthModel,
    pub dcr: Vec<DcrTargets>,
    pub traps: Vec<TrapTarget>,
    /// Hold-off and simulated acquisition time of the dark-count runs used to
    /// correct the dark model for afterpulsing.
    pub dcr_holdoff_s: f64,
    pub dcr_acquisition_s: f64,
    pub default_pde: f64,
}

/// Gate width, dark and trap targets of the three operating temperatures.
///
/// The 223 K dark rates and every afterpulse value are measured operating
/// points; the 233 K and 243 K dark rates are placeholders that keep the
/// observed exponential trend and a roughly doubling rate per 10 K.
pub fn reference_targets(gate_freq_hz: f64) -> Result<PresetTargets> {
    let gate_width = calibrate_gate_width(
        &[(0.10, 188.0, 1180.0), (0.275, 1200.0, 5960.0)],
        gate_freq_hz,
    )?;
    let holdoff = 100e-9;
    let trap = |pde, temperature_k, p_ap| TrapTarget {
        pde,
        temperature_k,
        holdoff_s: holdoff,
        p_ap,
    };
    Ok(PresetTargets {
        gate_width,
        dcr: vec![
            DcrTargets {
                temperature_k: 223.0,
                points: vec![(0.10, 188.0), (0.275, 1200.0)],
            },
            DcrTargets {
                temperature_k: 233.0,
                points: vec![(0.10, 400.0), (0.275, 2500.0)],
            },
            DcrTargets {
                temperature_k: 243.0,
                points: vec![(0.10, 850.0), (0.275, 5000.0)],
            },
        ],
        traps: vec![
            trap(0.10, 223.0, 0.033),
            trap(0.275, 223.0, 0.091),
            trap(0.275, 233.0, 0.072),
            trap(0.275, 243.0, 0.061),
        ],
        dcr_holdoff_s: holdoff,
        dcr_acquisition_s: 1000.0,
        default_pde: 0.10,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibratedPreset {
    pub params: DetectorParams,
    /// Worst relative afterpulse deviation left by the trap fit.
    pub trap_residual: f64,
}

/// Number of fixed-point passes correcting the dark model for afterpulses.
const DCR_PASSES: usize = 3;

/// Produces one preset per temperature.
///
/// 1. The dark model is first fitted to the measured rates as if they were
///    all primary dark counts.
/// 2. Trap models are fitted with that provisional dark model.
/// 3. The primary dark rates are then rescaled so that simulated
///    measurements (primary dark counts plus their afterpulses) reproduce the
///    targets, and the dark model is refitted.
pub fn calibrate_presets(
    targets: &PresetTargets,
    clock: &GateClock,
    source: &PhotonSource,
    cal: &TrapCalibration,
    seed: u64,
) -> Result<Vec<CalibratedPreset>> {
    let mut base = Vec::new();
    for t in &targets.dcr {
        base.push(DetectorParams {
            temperature_k: t.temperature_k,
            pde: targets.default_pde,
            dcr: calibrate_dcr(&t.points)?,
            gate_width: targets.gate_width,
            traps: TrapModel::zeroed(),
        });
    }
    let traps = calibrate_traps(
        &base,
        clock,
        source,
        &targets.traps,
        cal,
        derive_seed(seed, 0),
    )?;
    let holdoff = HoldOffPolicy::new(targets.dcr_holdoff_s);
    let n_gates = (targets.dcr_acquisition_s * clock.gate_freq_hz).round() as u64;

    base.iter()
        .zip(&targets.dcr)
        .zip(traps)
        .enumerate()
        .map(|(ti, ((params, t), fitted))| {
            let mut params = params.with_traps(fitted.traps);
            let mut primary = t.points.clone();
            for _ in 0..DCR_PASSES {
                for (i, (pde, target)) in t.points.iter().enumerate() {
                    let summary = run_counts(
                        &params.with_pde(*pde),
                        clock,
                        &PhotonSource::off(),
                        &holdoff,
                        n_gates,
                        derive_seed(seed, 1 + (ti * 16 + i) as u64),
                        RunOptions::default(),
                    )?;
                    let measured =
                        summary.recorded.total() as f64 * clock.gate_freq_hz / n_gates as f64;
                    if measured > 0.0 {
                        primary[i].1 *= target / measured;
                    }
                }
                params.dcr = calibrate_dcr(&primary)?;
            }
            Ok(CalibratedPreset {
                params,
                trap_residual: fitted.residual,
            })
        })
        .collect()
}
