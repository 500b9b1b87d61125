use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{parse_toml, read_text, validation, write_atomic};
use crate::engine::{EngineMode, TrapMode};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    S21,
    Trace,
    DelayScan,
    DcrCurve,
    Afterpulse,
    PapCurve,
    Stability,
    Calibrate,
}

impl Protocol {
    pub fn name(self) -> &'static str {
        match self {
            Protocol::S21 => "s21",
            Protocol::Trace => "trace",
            Protocol::DelayScan => "delay-scan",
            Protocol::DcrCurve => "dcr-curve",
            Protocol::Afterpulse => "afterpulse",
            Protocol::PapCurve => "pap-curve",
            Protocol::Stability => "stability",
            Protocol::Calibrate => "calibrate",
        }
    }

    pub fn needs_preset(self) -> bool {
        !matches!(self, Protocol::S21 | Protocol::Trace | Protocol::Calibrate)
    }

    pub fn needs_holdoff(self) -> bool {
        matches!(self, Protocol::Afterpulse | Protocol::PapCurve)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Optional settings layered over protocol defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Overrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pde: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub holdoff_ns: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Gates per acquisition (per grid point for sweeps).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gates: Option<u64>,
    /// Seconds per acquisition; ignored when `gates` is set.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub engine: Option<EngineMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trap_mode: Option<TrapMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_points: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pde_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analytic: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minutes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub drift_ps_per_hour: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rescan: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub avalanches_ns: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_mv: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub protocol: Protocol,
    /// Preset files, relative to the config file. Curves take one per
    /// temperature; single-point protocols use the first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub presets: Vec<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub overrides: Overrides,
}

impl RunConfig {
    pub fn new(protocol: Protocol) -> Self {
        Self {
            protocol,
            presets: Vec::new(),
            output_dir: None,
            overrides: Overrides::default(),
        }
    }

    /// Checks protocol requirements and numeric ranges; `path` labels errors.
    pub fn validate(&self, path: &Path) -> Result<()> {
        let o = &self.overrides;
        let fail = |key: &str, reason: &str| Err(validation(path, key, reason));
        if self.protocol.needs_preset() && self.presets.is_empty() {
            return fail(
                "presets",
                &format!("protocol `{}` needs a preset", self.protocol),
            );
        }
        if self.protocol.needs_holdoff() && o.holdoff_ns.is_none() {
            return fail(
                "holdoff_ns",
                &format!("protocol `{}` needs a hold-off", self.protocol),
            );
        }
        if let Some(p) = o.pde {
            if !(0.0..=1.0).contains(&p) {
                return fail("pde", &format!("{p} not in [0, 1]"));
            }
        }
        if let Some(grid) = &o.pde_grid {
            if grid.is_empty() || grid.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return fail("pde_grid", "entries must lie in [0, 1]");
            }
        }
        if let Some(h) = o.holdoff_ns {
            if !(h >= 0.0) {
                return fail("holdoff_ns", &format!("{h} must be >= 0"));
            }
        }
        if o.gates == Some(0) {
            return fail("gates", "must be >= 1");
        }
        if let Some(s) = o.seconds {
            if !(s > 0.0 && s.is_finite()) {
                return fail("seconds", &format!("{s} must be > 0"));
            }
        }
        if let Some(mu) = o.mu {
            if !(mu >= 0.0 && mu.is_finite()) {
                return fail("mu", &format!("{mu} must be >= 0"));
            }
        }
        if let Some(n) = o.n_points {
            let min = if self.protocol == Protocol::DelayScan {
                16
            } else {
                2
            };
            if n < min {
                return fail("n_points", &format!("{n} must be >= {min}"));
            }
        }
        if let Some(m) = o.minutes {
            if m < 20 {
                return fail("minutes", &format!("{m} must be >= 20"));
            }
        }
        if let Some(d) = o.drift_ps_per_hour {
            if !d.is_finite() {
                return fail("drift_ps_per_hour", "must be finite");
            }
        }
        if let Some(n) = o.noise_mv {
            if !(n >= 0.0 && n.is_finite()) {
                return fail("noise_mv", "must be >= 0");
            }
        }
        if o.engine == Some(EngineMode::Fast) && o.trap_mode == Some(TrapMode::Exact) {
            return fail(
                "trap_mode",
                "exact trap populations need engine = \"naive\"",
            );
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

/// Reads and validates a run configuration.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let config: RunConfig = parse_toml(&read_text(path)?, path)?;
    config.validate(path)?;
    Ok(config)
}

pub fn save_config(config: &RunConfig, path: &Path) -> Result<()> {
    write_atomic(path, config.to_toml().as_bytes())
}
