use proptest::prelude::*;

use swgspd::engine::{
    per_gate_probabilities, trap_update, DcrModel, DetectorParams, EngineMode, EngineState,
    GateClock, GateWidthModel, HoldOffPolicy, PhotonSource, RunOptions, Simulation, TrapModel,
};
use swgspd::experiments::{
    afterpulse_measurement, dcr_point, delay_scan, AfterpulseSettings, ScanMode, ScanSettings,
};
use swgspd::io::{Overrides, Protocol, RunConfig};

fn detector(dcr_cps: f64, pde: f64, width_s: f64, traps: TrapModel) -> DetectorParams {
    DetectorParams {
        temperature_k: 223.0,
        pde,
        dcr: DcrModel {
            dcr0_cps: dcr_cps,
            k_pde: 0.0,
        },
        gate_width: GateWidthModel {
            a_s_per_unit_pde: 0.0,
            b_s: width_s,
        },
        traps,
    }
}

fn trap_model() -> impl Strategy<Value = TrapModel> {
    (0.0..5.0f64, 1e-8..5e-6f64, 0.0..1.0f64, 0.0..2.0f64).prop_map(|(n, tau, p, k)| TrapModel {
        n_fill: n,
        tau_detrap_s: tau,
        p_trigger: p,
        ref_pde: 0.1,
        pde_exponent: k,
    })
}

fn run(
    params: &DetectorParams,
    source: &PhotonSource,
    holdoff_s: f64,
    mode: EngineMode,
    n_gates: u64,
    seed: u64,
) -> swgspd::engine::CountsSummary {
    let clock = GateClock::new(1.25e9);
    let holdoff = HoldOffPolicy::new(holdoff_s);
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
    .run(n_gates, seed, |_| Ok(()))
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn per_gate_probabilities_are_probabilities(
        dcr in 0.0..1e9f64,
        pde in 0.0..=1.0f64,
        width in 1e-12..7e-10f64,
        mu in 0.0..20.0f64,
        population in 0.0..1e4f64,
        traps in trap_model(),
        gate in 0u64..10_000,
    ) {
        let params = detector(dcr, pde, width, traps);
        let clock = GateClock::new(1.25e9);
        let state = EngineState { trap_population: population, ..EngineState::fresh(gate) };
        let p = per_gate_probabilities(&params, &clock, &PhotonSource::laser_625khz(mu), &state, gate);
        for x in [p.photon, p.dark, p.afterpulse] {
            prop_assert!((0.0..=1.0).contains(&x), "{p:?}");
        }
    }

    #[test]
    fn trap_population_decays_and_fills(
        traps in trap_model(),
        population in 0.0..100.0f64,
        hit: bool,
    ) {
        let state = EngineState { trap_population: population, ..EngineState::fresh(0) };
        let next = trap_update(&state, hit, &traps, 0.8e-9);
        let decayed = population * traps.decay_per_gate(0.8e-9);
        prop_assert!(next.trap_population >= 0.0);
        prop_assert!(decayed <= population);
        let expect = decayed + if hit { traps.n_fill } else { 0.0 };
        prop_assert!((next.trap_population - expect).abs() <= 1e-12 * (1.0 + expect));
        prop_assert_eq!(next.gate_index, 1);
    }

    #[test]
    fn dcr_identities(
        counts in 0u64..1_000_000_000,
        n_gates in 1u64..100_000_000_000,
        pde in 0.01..=1.0f64,
        width in 1e-11..7e-10f64,
    ) {
        let params = detector(0.0, pde, width, TrapModel::zeroed());
        let p = dcr_point(&params, 1.25e9, counts, n_gates);
        prop_assert_eq!(p.dcr_per_gate * 1.25e9, p.dcr_cps);
        prop_assert!(p.duty_cycle > 0.0 && p.duty_cycle < 1.0);
        prop_assert!(p.dcr_normalized_cps >= p.dcr_cps);
        let back = p.dcr_normalized_cps * p.duty_cycle;
        prop_assert!((back - p.dcr_cps).abs() <= 2.0 * f64::EPSILON * p.dcr_cps);
    }

    #[test]
    fn count_off_invariance_and_monotone_recording(
        dcr in 1e5..2e7f64,
        pde in 0.0..=0.5f64,
        mu in 0.0..3.0f64,
        h1 in 0.0..2e-6f64,
        h2 in 0.0..2e-6f64,
        seed: u64,
    ) {
        let params = detector(dcr, pde, 150e-12, TrapModel::zeroed());
        let source = PhotonSource::laser_625khz(mu);
        let (lo, hi) = if h1 <= h2 { (h1, h2) } else { (h2, h1) };
        let a = run(&params, &source, lo, EngineMode::Fast, 200_000, seed);
        let b = run(&params, &source, hi, EngineMode::Fast, 200_000, seed);
        prop_assert_eq!(a.total_avalanches(), b.total_avalanches());
        prop_assert!(b.recorded.total() <= a.recorded.total());
    }

    #[test]
    fn runs_are_deterministic(
        traps in trap_model(),
        dcr in 0.0..1e7f64,
        seed: u64,
        naive: bool,
    ) {
        let params = detector(dcr, 0.2, 150e-12, traps);
        let source = PhotonSource::laser_625khz(1.0);
        let mode = if naive { EngineMode::Naive } else { EngineMode::Fast };
        let a = run(&params, &source, 50e-9, mode, 50_000, seed);
        let b = run(&params, &source, 50e-9, mode, 50_000, seed);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn config_round_trips(
        pde in proptest::option::of(0.0..=1.0f64),
        holdoff in proptest::option::of(0.0..1e5f64),
        seed in proptest::option::of(any::<u64>()),
        gates in proptest::option::of(1u64..1_000_000_000),
        minutes in proptest::option::of(20usize..1000),
        grid in proptest::option::of(proptest::collection::vec(0.0..=1.0f64, 1..6)),
    ) {
        let config = RunConfig {
            protocol: Protocol::PapCurve,
            presets: vec!["a.toml".into(), "b.toml".into()],
            output_dir: Some("out".into()),
            overrides: Overrides {
                pde,
                holdoff_ns: Some(holdoff.unwrap_or(100.0)),
                seed,
                gates,
                minutes,
                pde_grid: grid,
                ..Overrides::default()
            },
        };
        let text = config.to_toml();
        let back: RunConfig = toml::from_str(&text).unwrap();
        prop_assert_eq!(back, config);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn delay_scan_recovers_gate_width(width in 50e-12..400e-12f64) {
        let params = detector(188.0, 0.1, width, TrapModel::zeroed());
        let clock = GateClock::new(1.25e9);
        let settings = ScanSettings { mode: ScanMode::Analytic, ..ScanSettings::default() };
        let step = clock.period_s() / settings.n_points as f64;
        let scan = delay_scan(&params, &clock, &PhotonSource::laser_625khz(1.0), &settings, 1).unwrap();
        prop_assert_eq!(scan.delays_s.len(), scan.count_rates_cps.len());
        prop_assert!((scan.fwhm_s - width).abs() <= step, "{} vs {}", scan.fwhm_s, width);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn histogram_conserves_binned_events(
        n_fill in 0.0..3.0f64,
        tau in 1e-8..2e-6f64,
        p_trigger in 0.0..0.2f64,
        dcr in 0.0..1e6f64,
        holdoff in 0.0..1e-6f64,
        seed: u64,
    ) {
        let traps = TrapModel { n_fill, tau_detrap_s: tau, p_trigger, ref_pde: 0.1, pde_exponent: 0.0 };
        let params = detector(dcr, 0.5, 150e-12, traps);
        let settings = AfterpulseSettings {
            acquisition_s: 0.02,
            ..AfterpulseSettings::standard(HoldOffPolicy::new(holdoff))
        };
        let (hist, r) = afterpulse_measurement(
            &params,
            &GateClock::new(1.25e9),
            &PhotonSource::laser_625khz(5.0),
            &settings,
            seed,
        ).unwrap();
        prop_assert_eq!(hist.total(), r.binned_events);
        prop_assert!(r.binned_events >= r.starts);
        prop_assert_eq!(hist.counts.len(), 10_000);
    }
}
