use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{parse_toml, read_text, validation};
use crate::engine::{DcrModel, DetectorParams, GateWidthModel, TrapModel};
use crate::error::{Error, Result};

/// Calibrated detector at one temperature plus the gate frequency it was
/// calibrated for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Preset {
    pub params: DetectorParams,
    pub gate_freq_hz: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PresetFile {
    detector: DetectorSection,
    dcr: DcrModel,
    gate_width: GateWidthModel,
    traps: TrapModel,
    clock: ClockSection,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DetectorSection {
    temperature_k: f64,
    pde: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ClockSection {
    gate_freq_hz: f64,
}

impl Preset {
    pub fn to_toml(&self) -> String {
        let p = &self.params;
        let file = PresetFile {
            detector: DetectorSection {
                temperature_k: p.temperature_k,
                pde: p.pde,
            },
            dcr: p.dcr,
            gate_width: p.gate_width,
            traps: p.traps,
            clock: ClockSection {
                gate_freq_hz: self.gate_freq_hz,
            },
        };
        let body = toml::to_string(&file).expect("preset serializes");
        format!("# swgspd detector preset, {} K\n\n{body}", p.temperature_k)
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let file: PresetFile = parse_toml(text, path)?;
        let params = DetectorParams {
            temperature_k: file.detector.temperature_k,
            pde: file.detector.pde,
            dcr: file.dcr,
            gate_width: file.gate_width,
            traps: file.traps,
        };
        let gate_freq_hz = file.clock.gate_freq_hz;
        if !(gate_freq_hz > 0.0 && gate_freq_hz.is_finite()) {
            return Err(validation(path, "clock.gate_freq_hz", "must be positive"));
        }
        params.validate(gate_freq_hz).map_err(|e| match e {
            Error::InvalidParameter { name, reason } => validation(path, name, &reason),
            other => other,
        })?;
        Ok(Self {
            params,
            gate_freq_hz,
        })
    }
}

pub fn load_preset(path: &Path) -> Result<Preset> {
    Preset::from_toml(&read_text(path)?, path)
}
