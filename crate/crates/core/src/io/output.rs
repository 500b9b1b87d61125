use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::write_atomic;
use crate::chain::{S21Curve, WaveformTrace};
use crate::engine::EventRecord;
use crate::error::{Error, Result};
use crate::experiments::{
    AfterpulseResult, CalibratedPreset, DcrCurve, DelayScanResult, Histogram, PapPoint,
    StabilitySeries,
};

/// Fixed scientific notation with ten significant digits, so identical
/// values always produce identical bytes.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.9e}")
}

fn table<I, R>(header: &str, rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut out = String::with_capacity(64);
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let cells: Vec<String> = row.into_iter().collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn s21_csv(curve: &S21Curve) -> String {
    table(
        "freq_hz,mag_db",
        curve
            .freqs_hz
            .iter()
            .zip(&curve.mag_db)
            .map(|(f, m)| [fmt_f64(*f), fmt_f64(*m)]),
    )
}

pub fn trace_csv(trace: &WaveformTrace) -> String {
    table(
        "t_s,v",
        trace
            .samples
            .iter()
            .enumerate()
            .map(|(i, v)| [fmt_f64(trace.time_of(i)), fmt_f64(*v)]),
    )
}

pub fn delay_scan_csv(scan: &DelayScanResult) -> String {
    let mut out = format!("# fwhm_s={}\n", fmt_f64(scan.fwhm_s));
    out += &table(
        "delay_s,count_rate_cps",
        scan.delays_s
            .iter()
            .zip(&scan.count_rates_cps)
            .map(|(d, r)| [fmt_f64(*d), fmt_f64(*r)]),
    );
    out
}

pub fn dcr_curve_csv(curves: &[DcrCurve]) -> String {
    let multi = curves.len() > 1;
    let header = if multi {
        "temperature_k,pde,dcr_cps,dcr_per_gate,duty_cycle,dcr_normalized_cps"
    } else {
        "pde,dcr_cps,dcr_per_gate,duty_cycle,dcr_normalized_cps"
    };
    table(
        header,
        curves.iter().flat_map(|c| {
            c.points.iter().map(move |p| {
                let mut row = Vec::with_capacity(6);
                if multi {
                    row.push(fmt_f64(c.temperature_k));
                }
                row.extend([
                    fmt_f64(p.pde),
                    fmt_f64(p.dcr_cps),
                    fmt_f64(p.dcr_per_gate),
                    fmt_f64(p.duty_cycle),
                    fmt_f64(p.dcr_normalized_cps),
                ]);
                row
            })
        }),
    )
}

pub fn histogram_csv(hist: &Histogram) -> String {
    table(
        "bin_start_s,count",
        hist.counts
            .iter()
            .enumerate()
            .map(|(i, c)| [fmt_f64(hist.bin_start_s(i)), c.to_string()]),
    )
}

pub fn afterpulse_csv(r: &AfterpulseResult) -> String {
    table(
        "p_ap,p_ap_per_gate,window_s,photon_counts,afterpulse_counts,dcr_baseline_per_bin",
        [[
            fmt_f64(r.p_ap),
            fmt_f64(r.p_ap_per_gate),
            fmt_f64(r.window_s),
            r.photon_counts.to_string(),
            r.afterpulse_counts.to_string(),
            fmt_f64(r.dcr_baseline_per_bin),
        ]],
    )
}

pub fn pap_curve_csv(points: &[PapPoint]) -> String {
    table(
        "temperature_k,pde,p_ap,p_ap_per_gate,photon_counts,afterpulse_counts",
        points.iter().map(|p| {
            [
                fmt_f64(p.temperature_k),
                fmt_f64(p.pde),
                fmt_f64(p.p_ap),
                fmt_f64(p.p_ap_per_gate),
                p.photon_counts.to_string(),
                p.afterpulse_counts.to_string(),
            ]
        }),
    )
}

pub fn stability_csv(s: &StabilitySeries) -> String {
    let mut out = format!(
        "# rsd={}\n# poisson_rsd={}\n",
        fmt_f64(s.rsd()),
        fmt_f64(s.poisson_rsd())
    );
    out += &table(
        "t_min,counts_10s,delay_s,rescan",
        s.t_min.iter().enumerate().map(|(i, t)| {
            [
                t.to_string(),
                s.counts_10s[i].to_string(),
                fmt_f64(s.delays_s[i]),
                u8::from(s.rescan_marks.contains(t)).to_string(),
            ]
        }),
    );
    out
}

pub fn calibration_csv(presets: &[CalibratedPreset]) -> String {
    table(
        "temperature_k,dcr0_cps,k_pde,n_fill,tau_detrap_s,p_trigger,ref_pde,pde_exponent,trap_residual",
        presets.iter().map(|c| {
            let p = &c.params;
            let t = &p.traps;
            [
                fmt_f64(p.temperature_k),
                fmt_f64(p.dcr.dcr0_cps),
                fmt_f64(p.dcr.k_pde),
                fmt_f64(t.n_fill),
                fmt_f64(t.tau_detrap_s),
                fmt_f64(t.p_trigger),
                fmt_f64(t.ref_pde),
                fmt_f64(t.pde_exponent),
                fmt_f64(c.trap_residual),
            ]
        }),
    )
}

/// Newline-delimited JSON, one event per line.
pub fn events_ndjson(events: &[EventRecord]) -> String {
    let mut out = String::with_capacity(events.len() * 64);
    for ev in events {
        out += &serde_json::to_string(ev).expect("event serializes");
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub protocol: String,
    /// SHA-256 of the config snapshot below.
    pub config_sha256: String,
    pub config: serde_json::Value,
    pub presets: serde_json::Value,
    pub master_seed: u64,
    pub point_seeds: Vec<u64>,
    pub runtime_s: f64,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn config_hash(config_text: &str) -> String {
        let digest = Sha256::digest(config_text.as_bytes());
        digest.iter().fold(String::with_capacity(64), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }
}

pub const MANIFEST_NAME: &str = "manifest.json";

/// Files of one protocol run, held in memory until the run succeeds and then
/// committed together. Either every file lands in the directory or none does.
#[derive(Debug)]
pub struct OutputDir {
    dir: PathBuf,
    staged: Vec<(String, Vec<u8>)>,
}

impl OutputDir {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            staged: Vec::new(),
        }
    }

    pub fn path(&self) -> &Path {
        &self.dir
    }

    pub fn add(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.staged.push((name.to_string(), contents.into()));
    }

    pub fn names(&self) -> Vec<String> {
        self.staged.iter().map(|(n, _)| n.clone()).collect()
    }

    /// Writes every staged file, then the manifest. On failure, files this
    /// call already wrote are removed again.
    pub fn commit(self, manifest: &Manifest) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        let manifest_json = serde_json::to_vec_pretty(manifest).expect("manifest serializes");
        let mut written = Vec::new();
        let files = self
            .staged
            .iter()
            .map(|(n, b)| (n.as_str(), b.as_slice()))
            .chain(std::iter::once((MANIFEST_NAME, manifest_json.as_slice())));
        for (name, bytes) in files {
            let path = self.dir.join(name);
            if let Err(e) = write_atomic(&path, bytes) {
                for p in &written {
                    let _ = std::fs::remove_file(p);
                }
                return Err(e);
            }
            written.push(path);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_ten_significant_digits() {
        assert_eq!(fmt_f64(1.0 / 3.0), "3.333333333e-1");
        assert_eq!(fmt_f64(0.0), "0.000000000e0");
    }

    #[test]
    fn empty_scan_is_header_only_after_comment() {
        let scan = DelayScanResult {
            delays_s: vec![],
            count_rates_cps: vec![],
            fwhm_s: 1.27e-10,
            peak_delay_s: 0.0,
        };
        let text = delay_scan_csv(&scan);
        assert_eq!(text, "# fwhm_s=1.270000000e-10\ndelay_s,count_rate_cps\n");
    }

    #[test]
    fn histogram_rows() {
        let h = Histogram {
            bin_width_s: 1e-9,
            origin_s: 0.0,
            counts: vec![3, 0],
        };
        assert_eq!(
            histogram_csv(&h),
            "bin_start_s,count\n0.000000000e0,3\n1.000000000e-9,0\n"
        );
    }

    #[test]
    fn commit_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = OutputDir::new(dir.path().join("run"));
        out.add("a.csv", "x\n");
        let m = Manifest {
            tool: "swgspd",
            version: "0",
            protocol: "s21".into(),
            config_sha256: Manifest::config_hash(""),
            config: serde_json::Value::Null,
            presets: serde_json::Value::Null,
            master_seed: 1,
            point_seeds: vec![],
            runtime_s: 0.0,
            files: out.names(),
        };
        let written = out.commit(&m).unwrap();
        assert_eq!(written.len(), 2);
        let names: Vec<_> = std::fs::read_dir(dir.path().join("run"))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        assert_eq!(names.len(), 2, "{names:?}");
        assert_eq!(
            m.config_sha256,
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
