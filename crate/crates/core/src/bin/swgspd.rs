use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use swgspd::engine::{EngineMode, TrapMode};
use swgspd::io::{load_config, run_protocol, save_config, Overrides, Protocol, RunConfig};
use swgspd::Error;

/// Sine-wave-gated InGaAs/InP single-photon detector simulator.
#[derive(Parser)]
#[command(name = "swgspd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Readout-chain S21 magnitude.
    S21(Flags),
    /// Simulated readout-chain output trace with discriminated events.
    Trace(Flags),
    /// Count rate versus gate delay and effective gating width.
    DelayScan(Flags),
    /// Dark count rate versus detection efficiency.
    DcrCurve(Flags),
    /// Start-stop afterpulse histogram and afterpulse probability.
    Afterpulse(Flags),
    /// Afterpulse probability versus detection efficiency.
    PapCurve(Flags),
    /// Long-run count stability with periodic delay re-optimization.
    Stability(Flags),
    /// Fit detector presets to the reference operating points.
    Calibrate(Flags),
    /// Run a protocol described by a config file.
    Run {
        config: PathBuf,
        /// Output directory, overriding the config and the environment.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Flags {
    /// Detector preset file; repeat for multi-temperature curves.
    #[arg(long = "preset", value_name = "PATH")]
    presets: Vec<PathBuf>,
    /// Detection efficiency applied to every preset.
    #[arg(long)]
    pde: Option<f64>,
    /// Count-off hold-off after each recorded avalanche.
    #[arg(long, value_name = "NS")]
    holdoff_ns: Option<f64>,
    /// Master seed (default 1).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $SWGSPD_OUT_DIR, else ./swgspd-out).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Gates per acquisition or grid point.
    #[arg(long, conflicts_with = "seconds")]
    gates: Option<u64>,
    /// Seconds per acquisition or grid point.
    #[arg(long)]
    seconds: Option<f64>,
    /// Event-driven engine (default).
    #[arg(long, conflicts_with = "exact")]
    fast: bool,
    /// Per-gate reference engine.
    #[arg(long)]
    exact: bool,
    /// Integer trap populations (implies --exact).
    #[arg(long)]
    exact_traps: bool,
    /// Mean photons per laser pulse.
    #[arg(long)]
    mu: Option<f64>,
    /// Grid size for s21, delay-scan and the stability scans.
    #[arg(long)]
    n_points: Option<usize>,
    /// Comma-separated detection efficiencies.
    #[arg(long, value_delimiter = ',')]
    pde_grid: Option<Vec<f64>>,
    /// Noiseless expected rates instead of simulated counts (delay-scan).
    #[arg(long)]
    analytic: bool,
    /// Simulated stability run length (at least 20).
    #[arg(long)]
    minutes: Option<usize>,
    /// Injected drift of the optimal gate delay (stability).
    #[arg(long)]
    drift_ps_per_hour: Option<f64>,
    /// Optimize the delay only once, at the start (stability).
    #[arg(long)]
    no_rescan: bool,
    /// Comma-separated avalanche times for traces.
    #[arg(long, value_delimiter = ',', value_name = "NS")]
    avalanches_ns: Option<Vec<f64>>,
    /// RMS amplifier noise added to traces.
    #[arg(long, value_name = "MV")]
    noise_mv: Option<f64>,
    /// Also write the effective configuration to this file.
    #[arg(long, value_name = "PATH")]
    save_config: Option<PathBuf>,
}

impl Flags {
    fn into_config(self, protocol: Protocol) -> (RunConfig, Option<PathBuf>) {
        let engine = if self.exact || self.exact_traps {
            Some(EngineMode::Naive)
        } else if self.fast {
            Some(EngineMode::Fast)
        } else {
            None
        };
        let config = RunConfig {
            protocol,
            presets: self.presets,
            output_dir: self.out,
            overrides: Overrides {
                pde: self.pde,
                holdoff_ns: self.holdoff_ns,
                seed: self.seed,
                gates: self.gates,
                seconds: self.seconds,
                engine,
                trap_mode: self.exact_traps.then_some(TrapMode::Exact),
                mu: self.mu,
                n_points: self.n_points,
                pde_grid: self.pde_grid,
                analytic: self.analytic.then_some(true),
                minutes: self.minutes,
                drift_ps_per_hour: self.drift_ps_per_hour,
                rescan: self.no_rescan.then_some(false),
                avalanches_ns: self.avalanches_ns,
                noise_mv: self.noise_mv,
            },
        };
        (config, self.save_config)
    }
}

fn execute(cli: Cli) -> Result<(), Error> {
    let (config, base, save) = match cli.command {
        Command::Run { config, out } => {
            let mut cfg = load_config(&config).map_err(|e| match e {
                Error::Io { path, source } => Error::Validation {
                    path,
                    key: "config".into(),
                    reason: source.to_string(),
                },
                other => other,
            })?;
            if out.is_some() {
                cfg.output_dir = out;
            }
            let base = config.parent().map(Path::to_path_buf).unwrap_or_default();
            (cfg, base, None)
        }
        cmd => {
            let (protocol, flags) = match cmd {
                Command::S21(f) => (Protocol::S21, f),
                Command::Trace(f) => (Protocol::Trace, f),
                Command::DelayScan(f) => (Protocol::DelayScan, f),
                Command::DcrCurve(f) => (Protocol::DcrCurve, f),
                Command::Afterpulse(f) => (Protocol::Afterpulse, f),
                Command::PapCurve(f) => (Protocol::PapCurve, f),
                Command::Stability(f) => (Protocol::Stability, f),
                Command::Calibrate(f) => (Protocol::Calibrate, f),
                Command::Run { .. } => unreachable!(),
            };
            let (cfg, save) = flags.into_config(protocol);
            (cfg, PathBuf::new(), save)
        }
    };
    let report = run_protocol(&config, &base)?;
    if let Some(path) = save {
        save_config(&config, &path)?;
    }
    // Output goes to a possibly closed pipe; the files are already written.
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "{}: {}", config.protocol, report.summary);
    for f in &report.files {
        let _ = writeln!(stdout, "  wrote {}", f.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config_error() { 2 } else { 1 })
        }
    }
}
