//! Analog low-pass synthesis (elliptic and Chebyshev type I) as cascades of
//! real second-order sections.

use std::f64::consts::{PI, TAU};
use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::jacobi::{self, Modulus};
use crate::error::{Error, Result};

/// Number of grid points used to verify a design against its spec.
pub const COMPLIANCE_GRID_POINTS: usize = 10_000;

/// Slack granted to the compliance check for floating-point round-off at the
/// band edges, where the responses touch their bounds exactly.
const COMPLIANCE_TOL_DB: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterFamily {
    #[serde(rename = "chebyshev-type-1")]
    Chebyshev1,
    Elliptic,
}

impl fmt::Display for FilterFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterFamily::Chebyshev1 => "chebyshev-type-1",
            FilterFamily::Elliptic => "elliptic",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub passband_edge_hz: f64,
    pub stopband_freq_hz: f64,
    pub min_stopband_atten_db: f64,
    pub max_passband_ripple_db: f64,
    pub max_order: usize,
}

impl FilterSpec {
    /// The readout chain's low-pass target: ~1 GHz cut-off, 60 dB at the
    /// 1.25 GHz gate frequency.
    pub fn readout_lpf() -> Self {
        Self {
            passband_edge_hz: 1.0e9,
            stopband_freq_hz: 1.25e9,
            min_stopband_atten_db: 60.0,
            max_passband_ripple_db: 1.0,
            max_order: 12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.passband_edge_hz > 0.0 && self.passband_edge_hz.is_finite()) {
            return Err(Error::invalid("passband_edge_hz", "must be positive"));
        }
        if !(self.stopband_freq_hz > self.passband_edge_hz) {
            return Err(Error::invalid(
                "stopband_freq_hz",
                "must exceed passband_edge_hz",
            ));
        }
        if !(self.min_stopband_atten_db > 0.0) {
            return Err(Error::invalid("min_stopband_atten_db", "must be > 0"));
        }
        if !(self.max_passband_ripple_db > 0.0) {
            return Err(Error::invalid("max_passband_ripple_db", "must be > 0"));
        }
        if self.max_order < 1 {
            return Err(Error::invalid("max_order", "must be >= 1"));
        }
        Ok(())
    }

    fn ripple_eps(&self) -> f64 {
        (10f64.powf(self.max_passband_ripple_db / 10.0) - 1.0).sqrt()
    }

    fn stop_eps(&self) -> f64 {
        (10f64.powf(self.min_stopband_atten_db / 10.0) - 1.0).sqrt()
    }
}

/// `H(s) = (b0 + b1·s + b2·s²) / (1 + a1·s + a2·s²)` with `s` in rad/s.
/// A first-order section has `a2 = b2 = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Section {
    pub fn eval(&self, s: Complex64) -> Complex64 {
        let num = self.b[0] + s * (self.b[1] + s * self.b[2]);
        let den = 1.0 + s * (self.a[0] + s * self.a[1]);
        num / den
    }

    /// Roots of `1 + a1·s + a2·s²`.
    pub fn poles(&self) -> Vec<Complex64> {
        let [a1, a2] = self.a;
        if a2 == 0.0 {
            if a1 == 0.0 {
                return Vec::new();
            }
            return vec![Complex64::new(-1.0 / a1, 0.0)];
        }
        let disc = Complex64::new(a1 * a1 - 4.0 * a2, 0.0).sqrt();
        vec![(-a1 + disc) / (2.0 * a2), (-a1 - disc) / (2.0 * a2)]
    }

    pub fn is_stable(&self) -> bool {
        self.poles().iter().all(|p| p.re < 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterDesign {
    pub family: FilterFamily,
    pub order: usize,
    pub sections: Vec<Section>,
    pub dc_gain_db: f64,
}

impl FilterDesign {
    /// A pass-through stage: no sections, 0 dB everywhere.
    pub fn identity() -> Self {
        Self {
            family: FilterFamily::Elliptic,
            order: 0,
            sections: Vec::new(),
            dc_gain_db: 0.0,
        }
    }

    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let s = Complex64::new(0.0, TAU * freq_hz);
        self.sections
            .iter()
            .fold(Complex64::new(1.0, 0.0), |acc, sec| acc * sec.eval(s))
    }

    pub fn mag_db(&self, freq_hz: f64) -> f64 {
        to_db(self.response(freq_hz).norm())
    }

    pub fn is_stable(&self) -> bool {
        self.sections.iter().all(Section::is_stable)
    }

    /// Checks the passband and stopband bounds on a dense grid over
    /// `[0, 2·stopband]` plus both band edges.
    pub fn meets(&self, spec: &FilterSpec) -> bool {
        let top = 2.0 * spec.stopband_freq_hz;
        let step = top / (COMPLIANCE_GRID_POINTS - 1) as f64;
        let grid = (0..COMPLIANCE_GRID_POINTS)
            .map(|i| i as f64 * step)
            .chain([spec.passband_edge_hz, spec.stopband_freq_hz]);
        for f in grid {
            let db = self.mag_db(f);
            if f <= spec.passband_edge_hz && db < -spec.max_passband_ripple_db - COMPLIANCE_TOL_DB {
                return false;
            }
            if f >= spec.stopband_freq_hz && db > -spec.min_stopband_atten_db + COMPLIANCE_TOL_DB {
                return false;
            }
        }
        true
    }
}

pub(crate) fn to_db(mag: f64) -> f64 {
    // Floor at -400 dB so exact transmission zeros stay finite in exports.
    20.0 * mag.max(1e-20).log10()
}

/// Theoretical minimum order for `family` (not capped by `max_order`).
pub fn estimate_order(family: FilterFamily, spec: &FilterSpec) -> usize {
    let ep = spec.ripple_eps();
    let es = spec.stop_eps();
    if es <= ep {
        return 1;
    }
    let sel = spec.passband_edge_hz / spec.stopband_freq_hz;
    let n = match family {
        FilterFamily::Chebyshev1 => (es / ep).acosh() / (1.0 / sel).acosh(),
        FilterFamily::Elliptic => {
            let k = Modulus::new(sel);
            let k1 = Modulus::new(ep / es);
            jacobi::ellipk(k) * jacobi::ellipk_comp(k1)
                / (jacobi::ellipk_comp(k) * jacobi::ellipk(k1))
        }
    };
    // Guard against ceil() pushing an exact integer up through round-off.
    ((n - 1e-9).ceil() as usize).max(1)
}

/// Designs a filter of exactly `order` with the spec's passband edge and
/// ripple. Elliptic designs keep the stopband attenuation at the spec value
/// and move the stopband edge to whatever `order` affords.
pub fn design_order(family: FilterFamily, order: usize, spec: &FilterSpec) -> Result<FilterDesign> {
    spec.validate()?;
    if order == 0 {
        return Err(Error::invalid("order", "must be >= 1"));
    }
    let ep = spec.ripple_eps();
    let (zeros, poles) = if order == 1 {
        // Both families collapse to the same first-order section.
        (Vec::new(), vec![Complex64::new(-1.0 / ep, 0.0)])
    } else {
        match family {
            FilterFamily::Chebyshev1 => (Vec::new(), chebyshev_poles(order, ep)),
            FilterFamily::Elliptic => elliptic_zeros_poles(order, ep, spec.stop_eps()),
        }
    };
    let dc_gain = if order.is_multiple_of(2) {
        1.0 / (1.0 + ep * ep).sqrt()
    } else {
        1.0
    };
    let wp = TAU * spec.passband_edge_hz;
    let mut sections = build_sections(&zeros, &poles, wp);
    if let Some(first) = sections.first_mut() {
        for b in &mut first.b {
            *b *= dc_gain;
        }
    }
    let mut design = FilterDesign {
        family,
        order,
        sections,
        dc_gain_db: 0.0,
    };
    design.dc_gain_db = design.mag_db(0.0);
    Ok(design)
}

/// Minimum-order low-pass meeting `spec` in the given family.
pub fn synth_lowpass(spec: &FilterSpec, family: FilterFamily) -> Result<FilterDesign> {
    spec.validate()?;
    let start = estimate_order(family, spec);
    for order in start..=spec.max_order {
        let design = design_order(family, order, spec)?;
        if design.is_stable() && design.meets(spec) {
            return Ok(design);
        }
    }
    Err(Error::InfeasibleSpec {
        family: family.to_string(),
        max_order: spec.max_order,
        atten_db: spec.min_stopband_atten_db,
    })
}

/// Normalized (passband edge = 1 rad/s) Chebyshev type I poles, upper half
/// plane first, real pole last for odd orders.
fn chebyshev_poles(order: usize, ep: f64) -> Vec<Complex64> {
    let a = (1.0 / ep).asinh() / order as f64;
    let (sh, ch) = (a.sinh(), a.cosh());
    (1..=order)
        .filter(|k| 2 * k <= order + 1)
        .map(|k| {
            let theta = (2 * k - 1) as f64 * PI / (2 * order) as f64;
            let re = -sh * theta.sin();
            let im = ch * theta.cos();
            Complex64::new(re, if im.abs() < 1e-12 { 0.0 } else { im })
        })
        .collect()
}

/// Normalized elliptic zeros (upper half plane) and poles (upper half plane,
/// then the real pole for odd orders).
fn elliptic_zeros_poles(order: usize, ep: f64, es: f64) -> (Vec<Complex64>, Vec<Complex64>) {
    let j = Complex64::new(0.0, 1.0);
    let k1 = Modulus::new(ep / es);
    let k = jacobi::degree_modulus(order, k1);
    let half = order / 2;
    let v0 = -j * jacobi::asne(j / ep, k1) / order as f64;

    let mut zeros = Vec::with_capacity(half);
    let mut poles = Vec::with_capacity(half + 1);
    for i in 1..=half {
        let u = (2 * i - 1) as f64 / order as f64;
        let zeta = jacobi::cde(Complex64::new(u, 0.0), k);
        zeros.push(j / (k.k * zeta));
        poles.push(j * jacobi::cde(u - j * v0, k));
    }
    if order % 2 == 1 {
        let p0 = j * jacobi::sne(j * v0, k);
        poles.push(Complex64::new(p0.re, 0.0));
    }
    (zeros, poles)
}

fn build_sections(zeros: &[Complex64], poles: &[Complex64], wp: f64) -> Vec<Section> {
    poles
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let p = p * wp;
            let (a, quad) = if p.im == 0.0 {
                ([-1.0 / p.re, 0.0], false)
            } else {
                let m2 = p.norm_sqr();
                ([-2.0 * p.re / m2, 1.0 / m2], true)
            };
            let b = match zeros.get(i) {
                Some(&z) if quad => [1.0, 0.0, 1.0 / (z * wp).norm_sqr()],
                _ => [1.0, 0.0, 0.0],
            };
            Section { b, a }
        })
        .collect()
}
