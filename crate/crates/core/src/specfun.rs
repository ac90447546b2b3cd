//! Weber's parabolic cylinder function `D_p(z)` for real order and argument.
//!
//! Evaluation regions:
//! - non-negative integer order: Hermite form `e^{-z²/4} He_p(z)`;
//! - negative order: the integral `e^{-z²/4}/Γ(-p) ∫₀^∞ t^{-p-1} e^{-t²/2 - zt} dt`;
//! - positive order, `z ≥ 0`: two integral values at orders in `[-2, 0)` lifted by
//!   the upward recurrence, which is the stable direction for `z ≥ 0`;
//! - positive order, `z < 0`: the even/odd confluent hypergeometric split, where
//!   both halves carry the same sign and no cancellation occurs.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// Largest supported `|p|`.
pub const P_MAX: f64 = 20.0;
/// Largest supported `|z|`.
pub const Z_MAX: f64 = 30.0;

const INTEGER_TOL: f64 = 1e-13;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PcfMethod {
    Hermite,
    Integral,
    Recurrence,
    Series,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PcfEval {
    pub p: f64,
    pub z: f64,
    pub value: f64,
    pub method: PcfMethod,
}

/// `D_p(z)`.
pub fn pcf(p: f64, z: f64) -> Result<f64> {
    pcf_eval(p, z).map(|e| e.value)
}

/// `D_p(z)` together with the evaluation region that produced it.
pub fn pcf_eval(p: f64, z: f64) -> Result<PcfEval> {
    if !p.is_finite() || !z.is_finite() || p.abs() > P_MAX || z.abs() > Z_MAX {
        return Err(Error::PcfOutOfEnvelope { p, z });
    }
    let n = p.round();
    let (value, method) = if n >= 0.0 && (p - n).abs() < INTEGER_TOL {
        (hermite_d(n as usize, z), PcfMethod::Hermite)
    } else if p < 0.0 {
        (integral_d(-p, z), PcfMethod::Integral)
    } else if z >= 0.0 {
        (lifted_d(p, z), PcfMethod::Recurrence)
    } else {
        (series_d(p, z), PcfMethod::Series)
    };
    if !value.is_finite() {
        return Err(Error::NonFinite(format!("D_{p}({z})")));
    }
    Ok(PcfEval { p, z, value, method })
}

fn hermite_d(n: usize, z: f64) -> f64 {
    let (mut h0, mut h1) = (1.0, z);
    if n == 0 {
        return (-0.25 * z * z).exp();
    }
    for k in 1..n {
        let h2 = z * h1 - k as f64 * h0;
        h0 = h1;
        h1 = h2;
    }
    h1 * (-0.25 * z * z).exp()
}

/// `D_{-q}(z)` for `q > 0` from the integral representation.
fn integral_d(q: f64, z: f64) -> f64 {
    let (scaled, log_scale) = scaled_integral(q, z);
    scaled * (log_scale - 0.25 * z * z).exp() / gamma(q)
}

/// Returns `(J, s)` with `∫₀^∞ t^{q-1} e^{-t²/2 - zt} dt = J·e^{s}`.
///
/// The interval is split at `a ≤ 1`. On `[0, a]` the exponential factor is
/// expanded in its Hermite generating series and integrated term by term, which
/// absorbs the `t^{q-1}` endpoint singularity exactly. On `[a, ∞)` the smooth
/// integrand is integrated with Gauss–Legendre panels.
fn scaled_integral(q: f64, z: f64) -> (f64, f64) {
    let a = if z.abs() > 1.0 { 1.0 / z.abs() } else { 1.0 };
    let phi = |t: f64| (q - 1.0) * t.ln() - 0.5 * t * t - z * t;

    let disc = z * z + 4.0 * (q - 1.0);
    let mut t_peak = a;
    if disc >= 0.0 {
        let t_star = 0.5 * (-z + disc.sqrt());
        if t_star > a {
            t_peak = t_star;
        }
    }
    let phi_max = phi(a).max(phi(t_peak)).max(0.0);

    // Head: Σ_k He_k(-z) a^k/k! · a^q/(q+k).
    let x = -z;
    let aq = (q * a.ln() - phi_max).exp();
    let mut h_prev = 0.0;
    let mut h = 1.0;
    let mut head = aq / q;
    let mut small = 0;
    for k in 0..400usize {
        let h_next = (x * a * h - a * a * h_prev) / (k as f64 + 1.0);
        h_prev = h;
        h = h_next;
        let term = h * aq / (q + k as f64 + 1.0);
        head += term;
        if term.abs() <= 1e-18 * head.abs().max(1e-300) {
            small += 1;
            if small >= 3 {
                break;
            }
        } else {
            small = 0;
        }
    }

    // Tail on [a, T].
    let t_end = t_peak.max(1.0) + 10.0;
    let w_max = if z > 0.0 { 0.5_f64.min(4.0 / z) } else { 0.5 };
    let (nodes, weights) = gauss_legendre_20();
    let mut tail = 0.0;
    let mut lo = a;
    let mut width = a.min(w_max);
    while lo < t_end {
        let hi = (lo + width).min(t_end);
        let half = 0.5 * (hi - lo);
        let mid = 0.5 * (hi + lo);
        let mut s = 0.0;
        for (xi, wi) in nodes.iter().zip(weights) {
            let t = mid + half * xi;
            s += wi * (phi(t) - phi_max).exp();
        }
        tail += half * s;
        lo = hi;
        width = (2.0 * width).min(w_max);
    }
    (head + tail, phi_max)
}

/// Positive non-integer `p` with `z ≥ 0`: upward recurrence from orders
/// `p0 - 1, p0` with `p0 = frac(p) - 1 ∈ [-1, 0)`.
fn lifted_d(p: f64, z: f64) -> f64 {
    let steps = p.floor();
    let p0 = (p - steps) - 1.0;
    let mut d_lo = integral_d(1.0 - p0, z);
    let mut d_hi = integral_d(-p0, z);
    let mut nu = p0;
    for _ in 0..(steps as usize + 1) {
        let next = z * d_hi - nu * d_lo;
        d_lo = d_hi;
        d_hi = next;
        nu += 1.0;
    }
    d_hi
}

/// Positive non-integer `p` with `z < 0`:
/// `D_p(z) = 2^{p/2} e^{-z²/4} [√π/Γ((1-p)/2) M(-p/2, 1/2, z²/2)
///                              - √(2π) z/Γ(-p/2) M((1-p)/2, 3/2, z²/2)]`.
///
/// Writing `p = n + δ` with integer `n` keeps every Pochhammer factor and the
/// reciprocal gammas accurate near integer orders.
fn series_d(p: f64, z: f64) -> f64 {
    let n = p.round() as i64;
    let delta = p - n as f64;
    let y = 0.5 * z * z;
    // First parameter of each M is (k0 - δ)/2.
    let even = kummer_offset(-n, delta, 0.5, y);
    let odd = kummer_offset(1 - n, delta, 1.5, y);
    let c_even = PI.sqrt() * rgamma_offset(1 - n, delta);
    let c_odd = -(2.0 * PI).sqrt() * z * rgamma_offset(-n, delta);
    let pref = (0.5 * p * std::f64::consts::LN_2 - 0.5 * y).exp();
    pref * (c_even * even + c_odd * odd)
}

/// `M(a, b, y)` with `a = (k0 - δ)/2`.
fn kummer_offset(k0: i64, delta: f64, b: f64, y: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut small = 0;
    for k in 0..5000i64 {
        let a_k = ((k0 + 2 * k) as f64 - delta) * 0.5;
        term *= a_k * y / ((b + k as f64) * (k as f64 + 1.0));
        sum += term;
        if term == 0.0 {
            break;
        }
        if (k as f64) > y && term.abs() <= 1e-17 * sum.abs() {
            small += 1;
            if small >= 3 {
                break;
            }
        } else {
            small = 0;
        }
    }
    sum
}

/// `1/Γ((k - δ)/2)` without forming the argument near a pole.
fn rgamma_offset(k: i64, delta: f64) -> f64 {
    let x = (k as f64 - delta) * 0.5;
    if x >= 0.5 {
        return 1.0 / gamma(x);
    }
    // 1/Γ(x) = sin(πx) Γ(1-x)/π with πx = πk/2 - πδ/2.
    let (s_k, c_k) = match k.rem_euclid(4) {
        0 => (0.0, 1.0),
        1 => (1.0, 0.0),
        2 => (0.0, -1.0),
        _ => (-1.0, 0.0),
    };
    let hd = 0.5 * PI * delta;
    let sin_pix = s_k * hd.cos() - c_k * hd.sin();
    sin_pix * gamma(1.0 - x) / PI
}

/// 20-point Gauss–Legendre nodes and weights on `[-1, 1]`.
fn gauss_legendre_20() -> &'static ([f64; 20], [f64; 20]) {
    static RULE: OnceLock<([f64; 20], [f64; 20])> = OnceLock::new();
    RULE.get_or_init(gauss_legendre::<20>)
}

pub(crate) fn gauss_legendre<const N: usize>() -> ([f64; N], [f64; N]) {
    let mut x = [0.0; N];
    let mut w = [0.0; N];
    let n = N as f64;
    for i in 0..N.div_ceil(2) {
        let mut r = (PI * (i as f64 + 0.75) / (n + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, r);
            for k in 2..=N {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * r * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = n * (r * p1 - p0) / (r * r - 1.0);
            let dr = p1 / dp;
            r -= dr;
            if dr.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -r;
        x[N - 1 - i] = r;
        let wi = 2.0 / ((1.0 - r * r) * dp * dp);
        w[i] = wi;
        w[N - 1 - i] = wi;
    }
    (x, w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre::<20>();
        let s: f64 = w.iter().sum();
        assert!((s - 2.0).abs() < 1e-14);
        let m: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(38)).sum();
        assert!((m - 2.0 / 39.0).abs() < 1e-14);
    }

    #[test]
    fn low_orders_match_closed_forms() {
        for z in [-2.0, 0.0, 1.0, 3.0, -7.5, 9.0] {
            let d0 = pcf(0.0, z).unwrap();
            assert!((d0 - (-0.25 * z * z).exp()).abs() < 1e-15);
            let d1 = pcf(1.0, z).unwrap();
            assert!((d1 - z * (-0.25 * z * z).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn minus_one_order_matches_erfc_form() {
        // D_{-1}(z) = e^{z²/4} √(π/2) erfc(z/√2)
        for z in [-4.0_f64, -1.0, 0.0, 0.5, 2.0, 6.0] {
            let expect = (0.25 * z * z).exp() * (PI / 2.0).sqrt() * statrs::function::erf::erfc(z / 2.0_f64.sqrt());
            let got = pcf(-1.0, z).unwrap();
            // statrs erfc is accurate to roughly 1e-11 here.
            assert!(((got - expect) / expect).abs() < 1e-10, "z={z}: {got} vs {expect}");
        }
    }

    #[test]
    fn value_at_zero_matches_gamma_form() {
        // D_p(0) = 2^{p/2} √π / Γ((1-p)/2)
        for p in [-3.3, -0.4, 0.25, 2.5, 7.75] {
            let expect = 2f64.powf(p / 2.0) * PI.sqrt() / gamma((1.0 - p) / 2.0);
            let got = pcf(p, 0.0).unwrap();
            assert!(((got - expect) / expect).abs() < 1e-13, "p={p}: {got} vs {expect}");
        }
    }

    #[test]
    fn regions_agree_across_z_zero() {
        for p in [0.3, 2.7, 5.5] {
            let left = series_d(p, -1e-9);
            let right = lifted_d(p, 1e-9);
            assert!(((left - right) / right).abs() < 1e-8, "p={p}");
        }
    }

    #[test]
    fn near_integer_orders_are_continuous() {
        // Away from the growth region z ≪ 0, where D_p is genuinely sensitive to p.
        for n in [1.0, 2.0, 3.0, 6.0] {
            for z in [-1.0, -0.5, 0.5, 4.0] {
                let exact = pcf(n, z).unwrap();
                let near = pcf(n + 1e-9, z).unwrap();
                let scale = exact.abs().max((-0.25 * z * z).exp());
                assert!((near - exact).abs() / scale < 1e-6, "n={n} z={z}: {near} vs {exact}");
            }
        }
    }

    #[test]
    fn envelope_is_enforced() {
        assert!(matches!(pcf(21.0, 0.0), Err(Error::PcfOutOfEnvelope { .. })));
        assert!(matches!(pcf(0.5, -30.5), Err(Error::PcfOutOfEnvelope { .. })));
        assert!(matches!(pcf(f64::NAN, 0.0), Err(Error::PcfOutOfEnvelope { .. })));
        assert!(pcf(-20.0, 30.0).unwrap() > 0.0);
        assert!(pcf(19.5, -30.0).unwrap().is_finite());
    }
}
