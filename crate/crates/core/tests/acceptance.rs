//! Acceptance suite: one PASS/FAIL line per criterion with its runtime.
//! Every stochastic check uses the fixed master seed below.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swgspd::chain::{frequency_response, synth_lowpass, ChainConfig, FilterFamily, FilterSpec};
use swgspd::engine::{
    DcrModel, DetectorParams, EngineMode, GateClock, GateWidthModel, HoldOffPolicy, PhotonSource,
    RunOptions, Simulation, TrapModel,
};
use swgspd::experiments::{
    afterpulse_measurement, dcr_pde_curve, dcr_point, delay_scan, pap_vs_pde_curve, stability_run,
    AfterpulseSettings, ScanMode, ScanSettings, StabilitySettings,
};
use swgspd::io::{load_preset, run_protocol, Overrides, Protocol, RunConfig};
use swgspd::rng::derive_seed;
use swgspd::stats::ks_two_sample;

const SEED: u64 = 1;
const F_GATE: f64 = 1.25e9;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn presets_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../presets")
}

fn preset(t: u32) -> DetectorParams {
    load_preset(&presets_dir().join(format!("preset_{t}K.toml")))
        .expect("preset")
        .params
}

fn clock() -> GateClock {
    GateClock::new(F_GATE)
}

fn afterpulse_settings(holdoff_s: f64, acquisition_s: f64) -> AfterpulseSettings {
    AfterpulseSettings {
        acquisition_s,
        ..AfterpulseSettings::standard(HoldOffPolicy::new(holdoff_s))
    }
}

fn filter_spec() -> Outcome {
    let spec = FilterSpec::readout_lpf();
    let d = synth_lowpass(&spec, FilterFamily::Elliptic).map_err(|e| e.to_string())?;
    let top = 2.0 * spec.stopband_freq_hz;
    let mut worst_pass = f64::INFINITY;
    let mut worst_stop = f64::NEG_INFINITY;
    for i in 0..10_000 {
        let f = top * i as f64 / 9_999.0;
        let db = d.mag_db(f);
        if f <= spec.passband_edge_hz {
            worst_pass = worst_pass.min(db);
        }
        if f >= spec.stopband_freq_hz {
            worst_stop = worst_stop.max(db);
        }
    }
    let ok = d.is_stable()
        && worst_pass >= -spec.max_passband_ripple_db - 1e-9
        && worst_stop <= -spec.min_stopband_atten_db + 1e-9;
    check(
        ok,
        format!(
            "order {}, passband min {worst_pass:.3} dB, stopband max {worst_stop:.2} dB",
            d.order
        ),
    )
}

fn net_s21() -> Outcome {
    let chain = ChainConfig::mirc().map_err(|e| e.to_string())?;
    let s = frequency_response(&chain, &[100e6, 1.25e9]).map_err(|e| e.to_string())?;
    let (lo, hi) = (s.mag_db[0], s.mag_db[1]);
    check(
        (39.0..=41.0).contains(&lo) && hi <= -80.0,
        format!("{lo:.2} dB at 100 MHz, {hi:.2} dB at 1.25 GHz"),
    )
}

/// Recorded dark-count gaps, in gates, from `runs` seeded runs.
fn dark_gaps(
    params: &DetectorParams,
    mode: EngineMode,
    n_gates: u64,
    runs: u64,
    seed: u64,
) -> Vec<f64> {
    let clock = clock();
    let holdoff = HoldOffPolicy::new(100e-9);
    let source = PhotonSource::off();
    let sim = Simulation {
        params,
        clock: &clock,
        source: &source,
        holdoff: &holdoff,
        options: RunOptions {
            mode,
            ..RunOptions::default()
        },
    };
    let mut gaps = Vec::new();
    for r in 0..runs {
        let mut last: Option<u64> = None;
        sim.run(n_gates, derive_seed(seed, r), |ev| {
            if ev.recorded {
                if let Some(l) = last {
                    gaps.push((ev.gate_index - l) as f64);
                }
                last = Some(ev.gate_index);
            }
            Ok(())
        })
        .expect("run");
    }
    gaps
}

fn dcr_points() -> Outcome {
    let params = preset(223);
    let gates = (10.0 * F_GATE) as u64;
    let started = Instant::now();
    let curves = dcr_pde_curve(
        &[params],
        &[0.10, 0.275],
        gates,
        &clock(),
        &HoldOffPolicy::new(100e-9),
        RunOptions::default(),
        SEED,
    )
    .map_err(|e| e.to_string())?;
    let fast_s = started.elapsed().as_secs_f64();
    let pts = &curves[0].points;
    let identities = pts.iter().all(|p| {
        p.dcr_per_gate * F_GATE == p.dcr_cps && p.dcr_normalized_cps == p.dcr_cps / p.duty_cycle
    });
    let (a, b) = (pts[0].dcr_cps, pts[1].dcr_cps);
    let in_band = (a / 188.0 - 1.0).abs() <= 0.05 && (b / 1200.0 - 1.0).abs() <= 0.05;

    let hot = params.with_pde(0.275);
    let exact = dark_gaps(
        &hot,
        EngineMode::Naive,
        10_000_000,
        16,
        derive_seed(SEED, 100),
    );
    let fast = dark_gaps(&hot, EngineMode::Fast, gates, 1, derive_seed(SEED, 200));
    let ks = ks_two_sample(&exact, &fast);
    check(
        identities && in_band && ks.p_value > 0.01 && fast_s < 30.0,
        format!(
            "{a:.1} cps at 0.10, {b:.1} cps at 0.275 ({:.2e}/gate, {:.0} cps normalized), identities {}, \
             skip-sampling {fast_s:.2} s, exact vs fast gap KS p = {:.3} ({} vs {} gaps)",
            pts[0].dcr_per_gate,
            pts[0].dcr_normalized_cps,
            if identities { "exact" } else { "broken" },
            ks.p_value,
            exact.len(),
            fast.len()
        ),
    )
}

fn gating_width() -> Outcome {
    let params = preset(223).with_pde(0.10);
    let settings = ScanSettings::default();
    let step = clock().period_s() / settings.n_points as f64;
    let scan = delay_scan(
        &params,
        &clock(),
        &PhotonSource::laser_625khz(1.0),
        &settings,
        SEED,
    )
    .map_err(|e| e.to_string())?;
    check(
        step <= 10e-12 + 1e-18 && (scan.fwhm_s - 127e-12).abs() <= step,
        format!(
            "FWHM {:.2} ps on a {:.1} ps grid (model width {:.2} ps)",
            scan.fwhm_s * 1e12,
            step * 1e12,
            params.gate_width_s() * 1e12
        ),
    )
}

fn afterpulse_points() -> Outcome {
    let source = PhotonSource::laser_625khz(1.0);
    let settings = afterpulse_settings(100e-9, 4.0);
    let mut lines = Vec::new();
    let mut ok = true;

    let started = Instant::now();
    let (_, r) = afterpulse_measurement(
        &preset(223).with_pde(0.10),
        &clock(),
        &source,
        &settings,
        SEED,
    )
    .map_err(|e| e.to_string())?;
    let secs = started.elapsed().as_secs_f64();
    ok &= (r.p_ap - 0.033).abs() <= 0.005
        && (r.p_ap_per_gate - 1.6e-6).abs() <= 0.2e-6
        && r.photon_counts >= 100_000
        && secs < 120.0;
    lines.push(format!(
        "223 K/0.10: {:.2}% ({:.2e}/gate, {} photons, {secs:.1} s)",
        r.p_ap * 100.0,
        r.p_ap_per_gate,
        r.photon_counts
    ));

    for (t, target, seed) in [(223, 0.091, 1), (233, 0.072, 2), (243, 0.061, 3)] {
        let started = Instant::now();
        let pts = pap_vs_pde_curve(
            &[preset(t)],
            &[0.275],
            &clock(),
            &source,
            &settings,
            derive_seed(SEED, seed),
        )
        .map_err(|e| e.to_string())?;
        let secs = started.elapsed().as_secs_f64();
        let p = &pts[0];
        ok &= (p.p_ap - target).abs() <= 0.010 && p.photon_counts >= 100_000 && secs < 120.0;
        lines.push(format!(
            "{t} K/0.275: {:.2}% (target {:.1}%, {secs:.1} s)",
            p.p_ap * 100.0,
            target * 100.0
        ));
    }
    check(ok, lines.join("; "))
}

fn holdoff_suppression() -> Outcome {
    let params = preset(223).with_pde(0.10);
    let source = PhotonSource::laser_625khz(1.0);
    let holdoffs = [100e-9, 200e-9, 500e-9, 1e-6, 2e-6, 5e-6, 10e-6];
    let mut p = Vec::new();
    let mut per_gate = 0.0;
    for (i, &h) in holdoffs.iter().enumerate() {
        let (_, r) = afterpulse_measurement(
            &params,
            &clock(),
            &source,
            &afterpulse_settings(h, 20.0),
            derive_seed(SEED, i as u64),
        )
        .map_err(|e| e.to_string())?;
        p.push(r.p_ap);
        per_gate = r.p_ap_per_gate;
    }
    let monotone = p.windows(2).all(|w| w[1] <= w[0]);
    let sweep: Vec<String> = holdoffs
        .iter()
        .zip(&p)
        .map(|(h, p)| format!("{}ns:{:.3}%", h * 1e9, p * 100.0))
        .collect();
    check(
        monotone && per_gate < 3e-7,
        format!(
            "{} monotone={monotone}, {per_gate:.2e}/gate at 10 us",
            sweep.join(" ")
        ),
    )
}

fn stability() -> Outcome {
    let params = preset(223);
    let source = PhotonSource::laser_625khz(1.0);
    let quiet = stability_run(
        &params,
        &clock(),
        &source,
        &StabilitySettings::default(),
        SEED,
    )
    .map_err(|e| e.to_string())?;
    let (rsd, poisson) = (quiet.rsd(), quiet.poisson_rsd());
    let poisson_ok = (rsd - poisson).abs() < 0.3 * poisson;

    let base = StabilitySettings {
        drift_s_per_hour: 50e-12,
        ..StabilitySettings::default()
    };
    let ratio = |rescan: bool| -> Result<f64, String> {
        let s = stability_run(
            &params,
            &clock(),
            &source,
            &StabilitySettings { rescan, ..base },
            derive_seed(SEED, 1),
        )
        .map_err(|e| e.to_string())?;
        let n = s.counts_10s.len();
        Ok(s.counts_10s[n - 1] as f64 / s.counts_10s[1] as f64)
    };
    let with = ratio(true)?;
    let without = ratio(false)?;
    check(
        poisson_ok && without < 0.9 && with > 0.95,
        format!(
            "60 min RSD {rsd:.5} vs Poisson {poisson:.5}; 50 ps/h drift final/initial {with:.3} with rescans, {without:.3} without"
        ),
    )
}

fn ks_suite() -> Result<(usize, f64), String> {
    let detector = |dcr: f64, pde: f64, traps: TrapModel| DetectorParams {
        temperature_k: 223.0,
        pde,
        dcr: DcrModel {
            dcr0_cps: dcr,
            k_pde: 0.0,
        },
        gate_width: GateWidthModel {
            a_s_per_unit_pde: 192e-12,
            b_s: 108e-12,
        },
        traps,
    };
    let traps = TrapModel {
        n_fill: 3.0,
        tau_detrap_s: 50e-9,
        p_trigger: 0.1,
        ref_pde: 0.1,
        pde_exponent: 0.0,
    };
    let cases = [
        (
            detector(2e6, 0.1, TrapModel::zeroed()),
            PhotonSource::off(),
            0.0,
        ),
        (
            detector(2e5, 0.3, TrapModel::zeroed()),
            PhotonSource::laser_625khz(3.0),
            20e-9,
        ),
        (
            detector(2e5, 0.3, TrapModel::zeroed()),
            PhotonSource {
                rep_rate_hz: 7.77e6,
                mu: 0.5,
                pulse_sigma_s: 30e-12,
            },
            0.0,
        ),
        (
            detector(1e6, 0.2, traps),
            PhotonSource::laser_625khz(2.0),
            10e-9,
        ),
    ];
    let clock = clock();
    let mut min_p = 1.0f64;
    for (i, (params, source, h)) in cases.iter().enumerate() {
        let holdoff = HoldOffPolicy::new(*h);
        let totals = |mode: EngineMode, stream: u64| -> Result<Vec<f64>, String> {
            (0..200)
                .map(|k| {
                    Simulation {
                        params,
                        clock: &clock,
                        source,
                        holdoff: &holdoff,
                        options: RunOptions {
                            mode,
                            ..RunOptions::default()
                        },
                    }
                    .run(200_000, derive_seed(derive_seed(SEED, stream), k), |_| {
                        Ok(())
                    })
                    .map(|s| s.recorded.total() as f64)
                    .map_err(|e| e.to_string())
                })
                .collect()
        };
        let fast = totals(EngineMode::Fast, 2 * i as u64)?;
        let naive = totals(EngineMode::Naive, 2 * i as u64 + 1)?;
        min_p = min_p.min(ks_two_sample(&fast, &naive).p_value);
    }
    Ok((cases.len(), min_p))
}

fn fwhm_suite() -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let clock = clock();
    let settings = ScanSettings {
        mode: ScanMode::Analytic,
        ..ScanSettings::default()
    };
    let step = clock.period_s() / settings.n_points as f64;
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let w = rng.random_range(50e-12..400e-12);
        let params = DetectorParams {
            gate_width: GateWidthModel {
                a_s_per_unit_pde: 0.0,
                b_s: w,
            },
            traps: TrapModel::zeroed(),
            ..preset(223)
        };
        let scan = delay_scan(
            &params,
            &clock,
            &PhotonSource::laser_625khz(1.0),
            &settings,
            SEED,
        )
        .map_err(|e| e.to_string())?;
        worst = worst.max((scan.fwhm_s - w).abs() / step);
    }
    Ok(worst)
}

fn identity_suite() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let params = preset(223);
    (0..10_000).all(|_| {
        let n = rng.random_range(1..100_000_000_000u64);
        let c = rng.random_range(0..n.min(1_000_000_000));
        let p = dcr_point(&params.with_pde(rng.random_range(0.0..=1.0)), F_GATE, c, n);
        p.dcr_per_gate * F_GATE == p.dcr_cps && p.dcr_normalized_cps == p.dcr_cps / p.duty_cycle
    })
}

fn conservation_suite() -> Result<usize, String> {
    let source = PhotonSource::laser_625khz(1.0);
    let mut n = 0;
    for (i, h) in [0.0, 100e-9, 1e-6].into_iter().enumerate() {
        for t in [223, 243] {
            let (hist, r) = afterpulse_measurement(
                &preset(t),
                &clock(),
                &source,
                &afterpulse_settings(h, 0.2),
                derive_seed(SEED, i as u64),
            )
            .map_err(|e| e.to_string())?;
            if hist.total() != r.binned_events {
                return Err(format!(
                    "{t} K, hold-off {h}: {} != {}",
                    hist.total(),
                    r.binned_events
                ));
            }
            n += 1;
        }
    }
    Ok(n)
}

fn protocol_configs() -> Vec<RunConfig> {
    let p = |t: u32| presets_dir().join(format!("preset_{t}K.toml"));
    let all = vec![p(223), p(233), p(243)];
    let cfg = |protocol, presets: Vec<PathBuf>, overrides: Overrides| RunConfig {
        protocol,
        presets,
        output_dir: None,
        overrides: Overrides {
            seed: Some(SEED),
            ..overrides
        },
    };
    vec![
        cfg(Protocol::S21, vec![], Overrides::default()),
        cfg(
            Protocol::Trace,
            vec![p(223)],
            Overrides {
                seconds: Some(400e-9),
                noise_mv: Some(0.2),
                mu: Some(20.0),
                ..Overrides::default()
            },
        ),
        cfg(
            Protocol::DelayScan,
            vec![p(223)],
            Overrides {
                gates: Some(12_500_000),
                ..Overrides::default()
            },
        ),
        cfg(
            Protocol::DcrCurve,
            all.clone(),
            Overrides {
                gates: Some(12_500_000),
                ..Overrides::default()
            },
        ),
        cfg(
            Protocol::Afterpulse,
            vec![p(223)],
            Overrides {
                holdoff_ns: Some(100.0),
                seconds: Some(0.5),
                ..Overrides::default()
            },
        ),
        cfg(
            Protocol::PapCurve,
            all,
            Overrides {
                holdoff_ns: Some(100.0),
                seconds: Some(0.2),
                pde_grid: Some(vec![0.1, 0.275]),
                ..Overrides::default()
            },
        ),
        cfg(
            Protocol::Stability,
            vec![p(223)],
            Overrides {
                minutes: Some(20),
                seconds: Some(1.0),
                gates: Some(12_500_000),
                drift_ps_per_hour: Some(50.0),
                ..Overrides::default()
            },
        ),
        cfg(
            Protocol::Calibrate,
            vec![],
            Overrides {
                seconds: Some(1.0),
                ..Overrides::default()
            },
        ),
    ]
}

fn outputs(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn reproducibility_suite() -> Result<usize, String> {
    let root = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut n = 0;
    for config in protocol_configs() {
        let mut runs = Vec::new();
        for rep in ["a", "b"] {
            let dir = root.path().join(format!("{}-{rep}", config.protocol));
            let cfg = RunConfig {
                output_dir: Some(dir.clone()),
                ..config.clone()
            };
            run_protocol(&cfg, Path::new("")).map_err(|e| format!("{}: {e}", config.protocol))?;
            runs.push(outputs(&dir));
        }
        if runs[0] != runs[1] {
            return Err(format!("{} outputs differ", config.protocol));
        }
        n += runs[0]
            .iter()
            .filter(|(name, _)| name.ends_with(".csv"))
            .count();
    }
    Ok(n)
}

fn property_suites() -> Outcome {
    let (cases, ks_p) = ks_suite()?;
    let fwhm_steps = fwhm_suite()?;
    let identities = identity_suite();
    let conserved = conservation_suite()?;
    let csvs = reproducibility_suite()?;
    check(
        ks_p > 0.01 && fwhm_steps <= 1.0 && identities,
        format!(
            "fast vs naive min KS p = {ks_p:.3} over {cases} cases x 200 seeds; \
             20 widths within {fwhm_steps:.2} grid steps; identities {}; \
             histogram totals conserved in {conserved} runs; {csvs} CSVs byte-identical on rerun",
            if identities { "exact" } else { "broken" }
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("1 filter spec", filter_spec),
        ("2 net S21", net_s21),
        ("3 DCR operating points", dcr_points),
        ("4 effective gating width", gating_width),
        ("5 afterpulse points", afterpulse_points),
        ("6 hold-off suppression", holdoff_suppression),
        ("7 stability protocol", stability),
        ("8 property suites", property_suites),
    ];
    let limits = [
        1.0,
        1.0,
        f64::INFINITY,
        60.0,
        f64::INFINITY,
        f64::INFINITY,
        f64::INFINITY,
        f64::INFINITY,
    ];
    let mut failed = 0;
    for ((name, f), limit) in criteria.into_iter().zip(limits) {
        let started = Instant::now();
        let outcome = f();
        let secs = started.elapsed().as_secs_f64();
        let (pass, detail) = match outcome {
            Ok(d) if secs < limit => (true, d),
            Ok(d) => (false, format!("{d}; over the {limit} s budget")),
            Err(d) => (false, d),
        };
        failed += usize::from(!pass);
        println!(
            "criterion {name:<26} {}  {secs:>7.2} s  {detail}",
            if pass { "PASS" } else { "FAIL" }
        );
    }
    println!("{} of 8 criteria passed", 8 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
