//! Jacobi elliptic functions and complete elliptic integrals evaluated with
//! descending Landen transformations.
//!
//! Arguments are normalized to the quarter period: `sne(u, m)` is
//! `sn(u·K(k), k)`. Every routine takes the modulus together with its
//! complement so that moduli very close to 1 (which show up in the
//! degree equation of sharp filters) keep full precision.

use std::f64::consts::{FRAC_PI_2, PI};

use num_complex::Complex64;

/// A modulus `k` paired with its complement `sqrt(1 - k²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Modulus {
    pub k: f64,
    pub kc: f64,
}

impl Modulus {
    pub fn new(k: f64) -> Self {
        Self {
            k,
            kc: ((1.0 - k) * (1.0 + k)).sqrt(),
        }
    }

    pub fn from_complement(kc: f64) -> Self {
        Self {
            k: ((1.0 - kc) * (1.0 + kc)).sqrt(),
            kc,
        }
    }

    pub fn complement(self) -> Self {
        Self {
            k: self.kc,
            kc: self.k,
        }
    }
}

const MAX_LANDEN_STEPS: usize = 32;

/// Descending Landen sequence `k_1, k_2, ...` with `k_{n+1} = (k_n / (1 + k'_n))²`.
fn landen(m: Modulus) -> Vec<f64> {
    let mut seq = Vec::new();
    let (mut k, mut kc) = (m.k, m.kc);
    for _ in 0..MAX_LANDEN_STEPS {
        if k <= f64::EPSILON {
            break;
        }
        let next = (k / (1.0 + kc)).powi(2);
        kc = 2.0 * kc.sqrt() / (1.0 + kc);
        k = next;
        seq.push(k);
    }
    seq
}

fn agm(mut a: f64, mut b: f64) -> f64 {
    for _ in 0..64 {
        if (a - b).abs() <= f64::EPSILON * a {
            break;
        }
        let next_a = 0.5 * (a + b);
        b = (a * b).sqrt();
        a = next_a;
    }
    a
}

/// Complete elliptic integral of the first kind, K(k).
pub fn ellipk(m: Modulus) -> f64 {
    PI / (2.0 * agm(1.0, m.kc))
}

/// Complementary complete integral, K'(k) = K(k').
pub fn ellipk_comp(m: Modulus) -> f64 {
    ellipk(m.complement())
}

fn ascend(mut w: Complex64, seq: &[f64]) -> Complex64 {
    for &v in seq.iter().rev() {
        w = (1.0 + v) * w / (1.0 + v * w * w);
    }
    w
}

/// `sn(u·K, k)` for complex normalized argument `u`.
pub fn sne(u: Complex64, m: Modulus) -> Complex64 {
    ascend((u * FRAC_PI_2).sin(), &landen(m))
}

/// `cd(u·K, k)` for complex normalized argument `u`.
pub fn cde(u: Complex64, m: Modulus) -> Complex64 {
    ascend((u * FRAC_PI_2).cos(), &landen(m))
}

fn symmetric_rem(x: f64, y: f64) -> f64 {
    x - y * (x / y).round()
}

/// Inverse of [`cde`]: returns `u` with `cd(u·K, k) = w`, reduced to the
/// fundamental period rectangle.
pub fn acde(w: Complex64, m: Modulus) -> Complex64 {
    let seq = landen(m);
    let mut w = w;
    let mut prev = m.k;
    for &v in &seq {
        w = w / (1.0 + (1.0 - w * w * prev * prev).sqrt()) * (2.0 / (1.0 + v));
        prev = v;
    }
    let u = w.acos() * (2.0 / PI);
    let ratio = ellipk_comp(m) / ellipk(m);
    Complex64::new(symmetric_rem(u.re, 4.0), symmetric_rem(u.im, 2.0 * ratio))
}

/// Inverse of [`sne`].
pub fn asne(w: Complex64, m: Modulus) -> Complex64 {
    Complex64::new(1.0, 0.0) - acde(w, m)
}

/// Solves the degree equation `N·K'(k)/K(k) = K'(k1)/K(k1)` for the
/// selectivity modulus `k`, given the discrimination modulus `k1`.
pub fn degree_modulus(order: usize, k1: Modulus) -> Modulus {
    let comp = k1.complement();
    let half = order / 2;
    let mut prod = 1.0;
    for i in 1..=half {
        let u = (2 * i - 1) as f64 / order as f64;
        prod *= sne(Complex64::new(u, 0.0), comp).re;
    }
    let kc = comp.k.powi(order as i32) * prod.powi(4);
    Modulus::from_complement(kc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quad_k(k: f64) -> f64 {
        // Midpoint rule on the substitution-free integrand; fine for k < 0.99.
        let n = 200_000;
        let h = FRAC_PI_2 / n as f64;
        (0..n)
            .map(|i| {
                let t = (i as f64 + 0.5) * h;
                h / (1.0 - (k * t.sin()).powi(2)).sqrt()
            })
            .sum()
    }

    #[test]
    fn ellipk_matches_quadrature() {
        for &k in &[0.0, 0.1, 0.5, 0.8, 0.95] {
            let m = Modulus::new(k);
            assert!((ellipk(m) - quad_k(k)).abs() < 1e-9, "k={k}");
        }
        assert!((ellipk(Modulus::new(0.0)) - FRAC_PI_2).abs() < 1e-15);
    }

    #[test]
    fn sn_and_cd_real_axis_identities() {
        let m = Modulus::new(0.8);
        // sn(K) = 1, cd(0) = 1, sn(0) = 0
        assert!((sne(Complex64::new(1.0, 0.0), m).re - 1.0).abs() < 1e-12);
        assert!((cde(Complex64::new(0.0, 0.0), m).re - 1.0).abs() < 1e-12);
        assert!(sne(Complex64::new(0.0, 0.0), m).norm() < 1e-15);
        // sn² + cn² = 1 with cn = cd·dn and dn² = 1 - k² sn²
        let u = Complex64::new(0.37, 0.0);
        let s = sne(u, m).re;
        let cd = cde(u, m).re;
        let dn = (1.0 - 0.64 * s * s).sqrt();
        let cn = cd * dn;
        assert!((s * s + cn * cn - 1.0).abs() < 1e-12);
    }

    #[test]
    fn asne_inverts_sne() {
        let m = Modulus::new(0.6);
        for &(re, im) in &[(0.3, 0.0), (0.2, 0.4), (0.7, -0.3)] {
            let u = Complex64::new(re, im);
            let back = asne(sne(u, m), m);
            assert!((back - u).norm() < 1e-10, "{u} -> {back}");
        }
    }

    #[test]
    fn degree_modulus_satisfies_degree_equation() {
        let k1 = Modulus::new(5.0e-4);
        for order in 2..9 {
            let k = degree_modulus(order, k1);
            let lhs = order as f64 * ellipk_comp(k) / ellipk(k);
            let rhs = ellipk_comp(k1) / ellipk(k1);
            assert!(
                (lhs - rhs).abs() < 1e-9 * lhs,
                "order {order}: {lhs} vs {rhs}"
            );
        }
    }
}
