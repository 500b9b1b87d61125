use std::path::{Path, PathBuf};
use std::time::Instant;

use serde_json::json;

use super::config::{Protocol, RunConfig};
use super::output::{self, Manifest, OutputDir};
use super::preset::{load_preset, Preset};
use super::validation;
use crate::chain::{
    discriminate, frequency_response, linear_grid, simulate_gate_waveform, ChainConfig,
};
use crate::engine::{EngineMode, GateClock, HoldOffPolicy, PhotonSource, RunOptions, Simulation};
use crate::error::{Error, Result};
use crate::experiments::{
    afterpulse_measurement, calibrate_presets, dcr_pde_curve, delay_scan, pap_vs_pde_curve,
    reference_targets, stability_run, AfterpulseSettings, ScanMode, ScanSettings,
    StabilitySettings, TrapCalibration,
};
use crate::rng::derive_seed;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "SWGSPD_OUT_DIR";

const DEFAULT_OUT_DIR: &str = "swgspd-out";
const DEFAULT_SEED: u64 = 1;
const DEFAULT_HOLDOFF_NS: f64 = 100.0;
const CALIBRATION_GATE_FREQ_HZ: f64 = 1.25e9;

#[derive(Debug, Clone)]
pub struct RunReport {
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// One-line human summary of the headline result.
    pub summary: String,
}

/// Output directory: the config's, else the environment's, else a default
/// under the working directory.
pub fn resolve_output_dir(config: &RunConfig) -> PathBuf {
    config
        .output_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

struct Ctx<'a> {
    config: &'a RunConfig,
    presets: Vec<Preset>,
    seed: u64,
    options: RunOptions,
    point_seeds: Vec<u64>,
    out: OutputDir,
}

impl Ctx<'_> {
    fn first(&self) -> &Preset {
        &self.presets[0]
    }

    fn clock(&self) -> GateClock {
        GateClock::new(self.first().gate_freq_hz)
    }

    fn holdoff(&self) -> HoldOffPolicy {
        HoldOffPolicy::new(
            self.config
                .overrides
                .holdoff_ns
                .unwrap_or(DEFAULT_HOLDOFF_NS)
                * 1e-9,
        )
    }

    fn source(&self) -> PhotonSource {
        PhotonSource::laser_625khz(self.config.overrides.mu.unwrap_or(1.0))
    }

    /// Acquisition length in gates from `gates`, else `seconds`, else the
    /// default duration.
    fn gates(&self, gate_freq_hz: f64, default_s: f64) -> u64 {
        let o = &self.config.overrides;
        o.gates.unwrap_or_else(|| {
            (o.seconds.unwrap_or(default_s) * gate_freq_hz)
                .round()
                .max(1.0) as u64
        })
    }

    fn seconds(&self, gate_freq_hz: f64, default_s: f64) -> f64 {
        let o = &self.config.overrides;
        match o.gates {
            Some(g) => g as f64 / gate_freq_hz,
            None => o.seconds.unwrap_or(default_s),
        }
    }

    fn derived(&mut self, n: usize) {
        self.point_seeds = (0..n as u64).map(|i| derive_seed(self.seed, i)).collect();
    }
}

/// Runs the configured protocol and writes its CSV files and manifest.
/// Relative preset paths resolve against `base_dir`. Nothing is written
/// when the protocol fails.
pub fn run_protocol(config: &RunConfig, base_dir: &Path) -> Result<RunReport> {
    let started = Instant::now();
    let config_path = base_dir.join("<config>");
    config.validate(&config_path)?;
    let presets = config
        .presets
        .iter()
        .map(|p| {
            let path = base_dir.join(p);
            load_preset(&path).map_err(|e| match e {
                Error::Io { path, source } => {
                    validation(&path, "presets", &format!("cannot read preset: {source}"))
                }
                other => other,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(f) = presets
        .windows(2)
        .find(|w| w[0].gate_freq_hz != w[1].gate_freq_hz)
    {
        return Err(validation(
            &config_path,
            "presets",
            &format!(
                "gate frequencies differ ({} vs {} Hz)",
                f[0].gate_freq_hz, f[1].gate_freq_hz
            ),
        ));
    }
    let o = &config.overrides;
    let mut options = RunOptions::default();
    if let Some(mode) = o.engine {
        options.mode = mode;
    }
    if let Some(tm) = o.trap_mode {
        options.trap_mode = tm;
        if tm == crate::engine::TrapMode::Exact {
            options.mode = EngineMode::Naive;
        }
    }
    let presets = presets
        .into_iter()
        .map(|mut p| {
            if let Some(pde) = o.pde {
                p.params = p.params.with_pde(pde);
            }
            p
        })
        .collect();
    let output_dir = resolve_output_dir(config);
    let mut ctx = Ctx {
        config,
        presets,
        seed: o.seed.unwrap_or(DEFAULT_SEED),
        options,
        point_seeds: Vec::new(),
        out: OutputDir::new(&output_dir),
    };

    let summary = match config.protocol {
        Protocol::S21 => s21(&mut ctx)?,
        Protocol::Trace => trace(&mut ctx)?,
        Protocol::DelayScan => delay(&mut ctx)?,
        Protocol::DcrCurve => dcr(&mut ctx)?,
        Protocol::Afterpulse => afterpulse(&mut ctx)?,
        Protocol::PapCurve => pap(&mut ctx)?,
        Protocol::Stability => stability(&mut ctx)?,
        Protocol::Calibrate => calibrate(&mut ctx)?,
    };

    let config_text = config.to_toml();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        protocol: config.protocol.to_string(),
        config_sha256: Manifest::config_hash(&config_text),
        config: serde_json::to_value(config).expect("config serializes"),
        presets: serde_json::Value::Array(
            ctx.presets
                .iter()
                .map(|p| json!({ "params": p.params, "gate_freq_hz": p.gate_freq_hz }))
                .collect(),
        ),
        master_seed: ctx.seed,
        point_seeds: ctx.point_seeds,
        runtime_s: started.elapsed().as_secs_f64(),
        files: ctx.out.names(),
    };
    let files = ctx.out.commit(&manifest)?;
    Ok(RunReport {
        output_dir,
        files,
        summary,
    })
}

fn s21(ctx: &mut Ctx) -> Result<String> {
    let chain = ChainConfig::mirc()?;
    let n = ctx.config.overrides.n_points.unwrap_or(600);
    let grid = linear_grid(5e6, 3e9, n);
    let curve = frequency_response(&chain, &grid)?;
    ctx.out.add("s21.csv", output::s21_csv(&curve));
    Ok(format!(
        "S21 {:.2} dB at 100 MHz, {:.2} dB at 1.25 GHz",
        chain.mag_db(100e6),
        chain.mag_db(1.25e9)
    ))
}

/// Simulated output trace. With a preset, avalanche times come from an
/// engine run over the trace duration; otherwise from `avalanches_ns`.
fn trace(ctx: &mut Ctx) -> Result<String> {
    let chain = ChainConfig::mirc()?;
    let o = &ctx.config.overrides;
    let duration_s = o.seconds.unwrap_or(200e-9);
    let noise_v = o.noise_mv.unwrap_or(0.0) * 1e-3;
    let mut times: Vec<f64> = o
        .avalanches_ns
        .clone()
        .unwrap_or_else(|| {
            if ctx.presets.is_empty() {
                vec![40.0, 120.0]
            } else {
                vec![]
            }
        })
        .iter()
        .map(|t| t * 1e-9)
        .collect();
    if !ctx.presets.is_empty() {
        let clock = GateClock::new(chain.gate_freq_hz);
        let n_gates = (duration_s * chain.gate_freq_hz).floor().max(1.0) as u64;
        let holdoff = ctx.holdoff();
        let source = ctx.source();
        let sim = Simulation {
            params: &ctx.first().params,
            clock: &clock,
            source: &source,
            holdoff: &holdoff,
            options: ctx.options,
        };
        let run = sim.collect(n_gates, derive_seed(ctx.seed, 1), true)?;
        let events = run.events.unwrap_or_default();
        times.extend(
            events
                .iter()
                .filter(|e| e.recorded && e.t_s <= duration_s)
                .map(|e| e.t_s),
        );
        ctx.out.add("events.ndjson", output::events_ndjson(&events));
    }
    times.sort_by(f64::total_cmp);
    let trace = simulate_gate_waveform(&chain, &times, duration_s, noise_v, ctx.seed)?;

    // Threshold at half the peak of one isolated avalanche above the
    // noiseless feed-through residual.
    let probe_t = (duration_s / 2.0).min(100e-9);
    let probe = simulate_gate_waveform(&chain, &[probe_t], duration_s, 0.0, ctx.seed)?;
    let residual = simulate_gate_waveform(&chain, &[], duration_s, 0.0, ctx.seed)?;
    let threshold_v = 0.5 * (probe.max() - residual.max().max(0.0)).max(f64::MIN_POSITIVE);
    let detected = discriminate(&trace, threshold_v, &chain)?;

    let sidecar = json!({
        "seed": ctx.seed,
        "duration_s": duration_s,
        "noise_rms_v": noise_v,
        "avalanche_times_s": times,
        "threshold_v": threshold_v,
        "discriminated_s": detected,
        "sample_rate_hz": trace.sample_rate_hz,
        "chain": chain,
    });
    ctx.out.add("trace.csv", output::trace_csv(&trace));
    ctx.out.add(
        "trace.json",
        serde_json::to_vec_pretty(&sidecar).expect("sidecar serializes"),
    );
    Ok(format!(
        "{} avalanches injected, {} discriminated",
        times.len(),
        detected.len()
    ))
}

fn delay(ctx: &mut Ctx) -> Result<String> {
    let clock = ctx.clock();
    let o = &ctx.config.overrides;
    let settings = ScanSettings {
        n_points: o.n_points.unwrap_or(ScanSettings::default().n_points),
        gates_per_point: ctx.gates(clock.gate_freq_hz, 0.1),
        holdoff: ctx.holdoff(),
        mode: if o.analytic == Some(true) {
            ScanMode::Analytic
        } else {
            ScanMode::Simulated
        },
        run: ctx.options,
    };
    let scan = delay_scan(
        &ctx.first().params,
        &clock,
        &ctx.source(),
        &settings,
        ctx.seed,
    )?;
    ctx.derived(settings.n_points);
    ctx.out.add("delay_scan.csv", output::delay_scan_csv(&scan));
    Ok(format!("FWHM {:.2} ps", scan.fwhm_s * 1e12))
}

fn pde_grid(ctx: &Ctx, default: &[f64]) -> Vec<f64> {
    ctx.config
        .overrides
        .pde_grid
        .clone()
        .unwrap_or_else(|| default.to_vec())
}

fn dcr(ctx: &mut Ctx) -> Result<String> {
    let clock = ctx.clock();
    let grid = pde_grid(
        ctx,
        &[
            0.05, 0.075, 0.10, 0.125, 0.15, 0.175, 0.20, 0.225, 0.25, 0.275, 0.30,
        ],
    );
    let params: Vec<_> = ctx.presets.iter().map(|p| p.params).collect();
    let curves = dcr_pde_curve(
        &params,
        &grid,
        ctx.gates(clock.gate_freq_hz, 1.0),
        &clock,
        &ctx.holdoff(),
        ctx.options,
        ctx.seed,
    )?;
    ctx.derived(params.len() * grid.len());
    ctx.out.add("dcr_curve.csv", output::dcr_curve_csv(&curves));
    Ok(format!(
        "{} temperatures x {} efficiencies",
        curves.len(),
        grid.len()
    ))
}

fn afterpulse_settings(ctx: &Ctx, gate_freq_hz: f64) -> AfterpulseSettings {
    AfterpulseSettings {
        acquisition_s: ctx.seconds(gate_freq_hz, 4.0),
        run: ctx.options,
        ..AfterpulseSettings::standard(ctx.holdoff())
    }
}

fn afterpulse(ctx: &mut Ctx) -> Result<String> {
    let clock = ctx.clock();
    let settings = afterpulse_settings(ctx, clock.gate_freq_hz);
    let (hist, r) = afterpulse_measurement(
        &ctx.first().params,
        &clock,
        &ctx.source(),
        &settings,
        ctx.seed,
    )?;
    ctx.out
        .add("afterpulse_histogram.csv", output::histogram_csv(&hist));
    ctx.out.add("afterpulse.csv", output::afterpulse_csv(&r));
    Ok(format!(
        "P_ap {:.3}% ({:.3e} per gate)",
        r.p_ap * 100.0,
        r.p_ap_per_gate
    ))
}

fn pap(ctx: &mut Ctx) -> Result<String> {
    let clock = ctx.clock();
    let settings = afterpulse_settings(ctx, clock.gate_freq_hz);
    let grid = pde_grid(ctx, &[0.05, 0.10, 0.15, 0.20, 0.25, 0.275]);
    let params: Vec<_> = ctx.presets.iter().map(|p| p.params).collect();
    let points = pap_vs_pde_curve(&params, &grid, &clock, &ctx.source(), &settings, ctx.seed)?;
    ctx.derived(points.len());
    ctx.out.add("pap_curve.csv", output::pap_curve_csv(&points));
    Ok(format!("{} points", points.len()))
}

fn stability(ctx: &mut Ctx) -> Result<String> {
    let clock = ctx.clock();
    let o = &ctx.config.overrides;
    let defaults = StabilitySettings::default();
    let holdoff = ctx.holdoff();
    let settings = StabilitySettings {
        total_minutes: o.minutes.unwrap_or(defaults.total_minutes),
        acquisition_s: o.seconds.unwrap_or(defaults.acquisition_s),
        rescan: o.rescan.unwrap_or(defaults.rescan),
        drift_s_per_hour: o.drift_ps_per_hour.unwrap_or(0.0) * 1e-12,
        holdoff,
        scan: ScanSettings {
            n_points: o.n_points.unwrap_or(defaults.scan.n_points),
            gates_per_point: o.gates.unwrap_or(defaults.scan.gates_per_point),
            holdoff,
            mode: defaults.scan.mode,
            run: ctx.options,
        },
        run: ctx.options,
        ..defaults
    };
    let series = stability_run(
        &ctx.first().params,
        &clock,
        &ctx.source(),
        &settings,
        ctx.seed,
    )?;
    ctx.derived(2 * settings.total_minutes);
    ctx.out.add("stability.csv", output::stability_csv(&series));
    Ok(format!(
        "RSD {:.4} (Poisson {:.4})",
        series.rsd(),
        series.poisson_rsd()
    ))
}

fn calibrate(ctx: &mut Ctx) -> Result<String> {
    let clock = GateClock::new(CALIBRATION_GATE_FREQ_HZ);
    let targets = reference_targets(clock.gate_freq_hz)?;
    let mut cal = TrapCalibration::default();
    cal.settings.acquisition_s = ctx.seconds(clock.gate_freq_hz, cal.settings.acquisition_s);
    cal.settings.run = ctx.options;
    let presets = calibrate_presets(&targets, &clock, &ctx.source(), &cal, ctx.seed)?;
    ctx.derived(1 + 16 * presets.len());
    ctx.out
        .add("calibration.csv", output::calibration_csv(&presets));
    for c in &presets {
        let preset = Preset {
            params: c.params,
            gate_freq_hz: clock.gate_freq_hz,
        };
        ctx.out.add(
            &format!("preset_{}K.toml", c.params.temperature_k.round() as i64),
            preset.to_toml(),
        );
    }
    let worst = presets.iter().map(|c| c.trap_residual).fold(0.0, f64::max);
    Ok(format!(
        "{} presets, worst afterpulse residual {:.1}%",
        presets.len(),
        worst * 100.0
    ))
}
