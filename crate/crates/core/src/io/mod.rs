//! Presets, run configurations, output files and the protocol dispatcher
//! used by the command-line tool.

mod config;
mod output;
mod preset;
mod protocol;

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;

pub use config::{load_config, save_config, Overrides, Protocol, RunConfig};
pub use output::{fmt_f64, Manifest, OutputDir};
pub use preset::{load_preset, Preset};
pub use protocol::{run_protocol, RunReport, OUT_DIR_ENV};

use crate::error::{Error, Result};

pub(crate) fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Deserializes TOML, reporting the 1-based line of the first error.
pub(crate) fn parse_toml<T: DeserializeOwned>(text: &str, path: &Path) -> Result<T> {
    toml::from_str(text).map_err(|e: toml::de::Error| {
        let line = e
            .span()
            .map(|s| text[..s.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(1);
        Error::Parse {
            path: path.to_path_buf(),
            line,
            message: e.message().to_string(),
        }
    })
}

pub(crate) fn validation(path: &Path, key: &str, reason: &str) -> Error {
    Error::Validation {
        path: path.to_path_buf(),
        key: key.to_string(),
        reason: reason.to_string(),
    }
}

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.flush().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
