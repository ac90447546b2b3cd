//! Closed-form one-agent transition functions for firms (`G1`, `T1`) and
//! investors (`G2`, `T2`).

use serde::{Deserialize, Serialize};

use crate::background::BackgroundState;
use crate::error::{Error, Result};
use crate::model::{allocated_capital, allocation_scale, AlphaEffVariant, FirmCoord, InvestorCoord, ModelSpec};
use crate::numerics::{interp, try_trapezoid_fn};

/// Subdivisions of every path integral.
pub const PATH_STEPS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FirmQuery {
    pub initial: FirmCoord,
    pub target: FirmCoord,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InvestorQuery {
    pub initial: InvestorCoord,
    pub target: InvestorCoord,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DriftParts {
    /// Return seeking, capital adjustment, attractiveness gradient.
    Firm { d1: f64, d2: f64, d3: f64 },
    /// Path integral of `g` and the endpoint capital term.
    Investor { path: f64, capital: f64 },
}

impl DriftParts {
    pub fn total(&self) -> f64 {
        match *self {
            DriftParts::Firm { d1, d2, d3 } => d1 + d2 + d3,
            DriftParts::Investor { path, capital } => path + capital,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionResult {
    pub log_value: f64,
    pub drift_d: f64,
    pub drift_parts: DriftParts,
    pub alpha_eff: f64,
    pub distance_term: f64,
    /// Shifted capital at the initial point (`K′` or `ŷ`).
    pub shifted_initial: f64,
    /// Shifted capital at the final point.
    pub shifted_target: f64,
}

impl TransitionResult {
    pub fn value(&self) -> f64 {
        self.log_value.exp()
    }
}

fn check_firm_query(spec: &ModelSpec, bg: &BackgroundState, q: &FirmQuery) -> Result<()> {
    q.initial.validate(spec, &bg.grid)?;
    q.target.validate(spec, &bg.grid)?;
    if q.initial.s != q.target.s {
        return Err(Error::OutOfRange(
            "a firm keeps its shape parameter along a transition".into(),
        ));
    }
    if !(q.alpha > 0.0) {
        return Err(Error::OutOfRange(format!("alpha {} must be positive", q.alpha)));
    }
    Ok(())
}

fn sector_value(bg: &BackgroundState, values: &[f64], x: f64) -> f64 {
    interp(bg.grid.x(), values, x)
}

/// Allocated capital `A(K, X) = F̂2(s, R(K, X)) K̂_X`.
fn alloc(spec: &ModelSpec, bg: &BackgroundState, k: f64, x: f64, s: f64) -> Result<f64> {
    allocated_capital(spec, bg, &FirmCoord { k, x, s })
}

/// `K ↦ A(K, x)` with the sector normalization evaluated once.
fn alloc_line<'a>(spec: &'a ModelSpec, bg: &BackgroundState, x: f64, s: f64) -> Result<impl Fn(f64) -> f64 + 'a> {
    let scale = allocation_scale(spec, bg, x)?;
    let fs = &spec.functions;
    Ok(move |k: f64| fs.f2.eval(s, fs.big_r.eval(k, x)) * scale)
}

/// `(D1, D2, D3)` of the firm drift.
pub fn drift_firm(spec: &ModelSpec, bg: &BackgroundState, q: &FirmQuery) -> Result<(f64, f64, f64)> {
    check_firm_query(spec, bg, q)?;
    let fs = &spec.functions;
    let (xi, xf) = (q.initial.x, q.target.x);
    let (ki, kf) = (q.initial.k, q.target.k);
    let s = q.initial.s;
    let xbar = 0.5 * (xi + xf);
    let d1 = try_trapezoid_fn(xi, xf, PATH_STEPS, |x| -> Result<f64> {
        let kx = sector_value(bg, &bg.k_x, x);
        Ok(fs.big_r.jet(kx, x).dx * fs.h.eval(kx) / spec.sigma_x2)
    })?;
    let a_mid = alloc_line(spec, bg, xbar, s)?;
    let d2 = -try_trapezoid_fn(ki, kf, PATH_STEPS, |k| -> Result<f64> { Ok(k - a_mid(k)) })?;
    let d3 = if xi == xf {
        0.0
    } else {
        // `∂_X A` by central differences, one-sided at the sector boundary.
        let h = 0.5 * bg.grid.x_spacing().min;
        let (lo, hi) = bg.grid.x_range();
        let (xa, xb) = ((xbar - h).max(lo), (xbar + h).min(hi));
        let (a_lo, a_hi) = (alloc_line(spec, bg, xa, s)?, alloc_line(spec, bg, xb, s)?);
        try_trapezoid_fn(ki, kf, PATH_STEPS, |k| -> Result<f64> {
            Ok(0.5 * (xf - xi) * (a_hi(k) - a_lo(k)) / (xb - xa))
        })?
    };
    Ok((d1, d2, d3))
}

/// Competition term `‖Ψ(X)‖² (K_X − K)/K`.
fn competition(bg: &BackgroundState, c: &FirmCoord) -> f64 {
    let n = sector_value(bg, &bg.psi2_x, c.x);
    let kx = sector_value(bg, &bg.k_x, c.x);
    n * (kx - c.k) / c.k
}

/// Shifted capitals `(K′_i, K′_f)` for the configured variant.
pub fn shifted_capitals(spec: &ModelSpec, bg: &BackgroundState, q: &FirmQuery) -> Result<(f64, f64)> {
    let s = q.initial.s;
    match spec.alpha_eff_variant {
        AlphaEffVariant::Appendix => {
            let xbar = 0.5 * (q.initial.x + q.target.x);
            Ok((
                q.initial.k - alloc(spec, bg, q.initial.k, xbar, s)?,
                q.target.k - alloc(spec, bg, q.target.k, xbar, s)?,
            ))
        }
        AlphaEffVariant::Text => {
            let at_avg = |c: &FirmCoord| -> Result<f64> {
                let kx = sector_value(bg, &bg.k_x, c.x);
                Ok(c.k - alloc(spec, bg, kx, c.x, s)?)
            };
            Ok((at_avg(&q.initial)?, at_avg(&q.target)?))
        }
    }
}

/// Effective inverse mobility of a firm.
pub fn alpha_eff_firm(spec: &ModelSpec, bg: &BackgroundState, q: &FirmQuery) -> Result<f64> {
    check_firm_query(spec, bg, q)?;
    let (kpi, kpf) = shifted_capitals(spec, bg, q)?;
    let diff = competition(bg, &q.target) - competition(bg, &q.initial);
    let tau_weight = match spec.alpha_eff_variant {
        AlphaEffVariant::Appendix => 0.5 * spec.tau,
        AlphaEffVariant::Text => spec.tau,
    };
    Ok(q.alpha + bg.d_const + tau_weight * diff + 0.5 * spec.sigma_k2 * kpf * kpi)
}

/// Firm transition function in the Laplace domain.
pub fn g1(spec: &ModelSpec, bg: &BackgroundState, q: &FirmQuery) -> Result<TransitionResult> {
    let (d1, d2, d3) = drift_firm(spec, bg, q)?;
    let alpha_eff = alpha_eff_firm(spec, bg, q)?;
    let (kpi, kpf) = shifted_capitals(spec, bg, q)?;
    let dx = q.target.x - q.initial.x;
    let distance = (dx * dx / (2.0 * spec.sigma_x2) + (kpf - kpi).powi(2) / (2.0 * spec.sigma_k2)).sqrt();
    let drift = d1 + d2 + d3;
    Ok(TransitionResult {
        log_value: drift - alpha_eff * distance,
        drift_d: drift,
        drift_parts: DriftParts::Firm { d1, d2, d3 },
        alpha_eff,
        distance_term: distance,
        shifted_initial: kpi,
        shifted_target: kpf,
    })
}

/// Time-independent pieces of the firm kernel `T1 = exp(c0 − rate·t − a/t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FirmKernel {
    /// `D1` plus the capital drift factor.
    pub log_prefactor: f64,
    /// Decay rate in `t`, including the cross term.
    pub rate: f64,
    /// Squared scaled displacement.
    pub a: f64,
}

/// Endpoint shifts `K′ = K − A(K, X)` at each endpoint's own sector.
fn endpoint_shifts(spec: &ModelSpec, bg: &BackgroundState, q: &FirmQuery) -> Result<(f64, f64)> {
    let s = q.initial.s;
    Ok((
        q.initial.k - alloc(spec, bg, q.initial.k, q.initial.x, s)?,
        q.target.k - alloc(spec, bg, q.target.k, q.target.x, s)?,
    ))
}

pub fn firm_kernel(spec: &ModelSpec, bg: &BackgroundState, q: &FirmQuery) -> Result<FirmKernel> {
    let (d1, _, _) = drift_firm(spec, bg, q)?;
    let s = q.initial.s;
    let kmin = bg.grid.k_range().0;
    let potential = |k_end: f64, x: f64| -> Result<f64> {
        let a = alloc_line(spec, bg, x, s)?;
        try_trapezoid_fn(kmin, k_end, PATH_STEPS, |k| -> Result<f64> { Ok(k - a(k)) })
    };
    let drift = -potential(q.target.k, q.target.x)? + potential(q.initial.k, q.initial.x)?;
    let (kpi, kpf) = endpoint_shifts(spec, bg, q)?;
    let comp = competition(bg, &q.target) + competition(bg, &q.initial);
    let dx = q.target.x - q.initial.x;
    Ok(FirmKernel {
        log_prefactor: d1 + drift,
        rate: bg.d_const + spec.tau * comp - 0.5 * spec.sigma_k2 * kpf * kpi,
        a: dx * dx / (2.0 * spec.sigma_x2) + (kpf - kpi).powi(2) / (2.0 * spec.sigma_k2),
    })
}

/// Firm transition function at elapsed time `t`.
pub fn t1(spec: &ModelSpec, bg: &BackgroundState, q: &FirmQuery, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::OutOfRange(format!("time {t} must be positive")));
    }
    let k = firm_kernel(spec, bg, q)?;
    Ok((k.log_prefactor - k.rate * t - k.a / t).exp())
}

/// Exact Laplace transform `∫₀^∞ e^{−αt} T1 dt = e^{c0} 2√(a/β) K₁(2√(aβ))`,
/// `β = α + rate`.
pub fn g1_laplace_exact(spec: &ModelSpec, bg: &BackgroundState, q: &FirmQuery) -> Result<f64> {
    let k = firm_kernel(spec, bg, q)?;
    let beta = q.alpha + k.rate;
    if !(beta > 0.0) {
        return Err(Error::OutOfRange(format!(
            "Laplace transform diverges: alpha + rate = {beta}"
        )));
    }
    if k.a == 0.0 {
        return Ok(k.log_prefactor.exp() / beta);
    }
    let z = 2.0 * (k.a * beta).sqrt();
    let log_k1 = if z < 600.0 {
        puruspe::Kn(1, z).ln()
    } else {
        -z + 0.5 * (std::f64::consts::PI / (2.0 * z)).ln() + (1.0 + 3.0 / (8.0 * z)).ln()
    };
    Ok((k.log_prefactor + (2.0 * (k.a / beta).sqrt()).ln() + log_k1).exp())
}

fn check_investor_query(bg: &BackgroundState, q: &InvestorQuery) -> Result<()> {
    q.initial.validate(&bg.grid)?;
    q.target.validate(&bg.grid)?;
    if !(q.alpha > 0.0) {
        return Err(Error::OutOfRange(format!("alpha {} must be positive", q.alpha)));
    }
    Ok(())
}

/// `f` along the path must keep one sign.
fn check_f_path(bg: &BackgroundState, a: f64, b: f64) -> Result<()> {
    let x = bg.grid.x();
    let check = |xi: f64| -> Result<f64> {
        let f = sector_value(bg, &bg.f_x, xi);
        if f == 0.0 || !f.is_finite() {
            return Err(Error::ZeroF { x: xi });
        }
        Ok(f)
    };
    let (lo, hi) = (a.min(b), a.max(b));
    let sign = check(lo)?.signum();
    let inner = x.iter().copied().filter(|v| *v > lo && *v < hi);
    for xi in inner.chain(std::iter::once(hi)) {
        if check(xi)?.signum() != sign {
            return Err(Error::ZeroF { x: xi });
        }
    }
    Ok(())
}

/// Shifted investor capital `ŷ = K̂ + σ_K̂² F/f²`.
pub fn shifted_investor_capital(spec: &ModelSpec, bg: &BackgroundState, c: &InvestorCoord) -> Result<f64> {
    let f = sector_value(bg, &bg.f_x, c.xhat);
    if f == 0.0 {
        return Err(Error::ZeroF { x: c.xhat });
    }
    let big_f = sector_value(bg, &bg.big_f_x, c.xhat);
    Ok(c.khat + spec.sigma_khat2 * big_f / (f * f))
}

/// Investor drift `D′ = (1/σ_X̂²)∫g + K̂_f² f(X̂_f)/σ_K̂² − K̂_i² f(X̂_i)/σ_K̂²`,
/// returned as `(path, capital)`.
pub fn drift_investor(spec: &ModelSpec, bg: &BackgroundState, q: &InvestorQuery) -> Result<(f64, f64)> {
    check_investor_query(bg, q)?;
    check_f_path(bg, q.initial.xhat, q.target.xhat)?;
    let path = try_trapezoid_fn(q.initial.xhat, q.target.xhat, PATH_STEPS, |x| {
        Ok::<_, Error>(sector_value(bg, &bg.g_x, x))
    })? / spec.sigma_xhat2;
    let ff = sector_value(bg, &bg.f_x, q.target.xhat);
    let fi = sector_value(bg, &bg.f_x, q.initial.xhat);
    let capital = (q.target.khat.powi(2) * ff - q.initial.khat.powi(2) * fi) / spec.sigma_khat2;
    Ok((path, capital))
}

fn gr_integrand(spec: &ModelSpec, bg: &BackgroundState, x: f64) -> f64 {
    let f = sector_value(bg, &bg.f_x, x);
    let g = sector_value(bg, &bg.g_x, x);
    let dg = sector_value(bg, &bg.grad_g_x, x);
    let big_f = sector_value(bg, &bg.big_f_x, x);
    let s2 = spec.sigma_xhat2;
    (g * g + s2 * (f + dg - spec.sigma_khat2 * big_f * big_f / (2.0 * f * f))) / (s2 * f.abs())
}

/// Relative long-term return of the sectors `g^(R)`, averaged along the path.
pub fn g_r(spec: &ModelSpec, bg: &BackgroundState, q: &InvestorQuery) -> Result<f64> {
    check_investor_query(bg, q)?;
    check_f_path(bg, q.initial.xhat, q.target.xhat)?;
    let (a, b) = (q.initial.xhat, q.target.xhat);
    if a == b {
        return Ok(gr_integrand(spec, bg, a));
    }
    let total = try_trapezoid_fn(a, b, PATH_STEPS, |x| Ok::<_, Error>(gr_integrand(spec, bg, x)))?;
    Ok(total / (b - a))
}

fn mid_f(bg: &BackgroundState, q: &InvestorQuery) -> f64 {
    sector_value(bg, &bg.f_x, 0.5 * (q.initial.xhat + q.target.xhat)).abs()
}

/// Investor transition function in the Laplace domain.
pub fn g2(spec: &ModelSpec, bg: &BackgroundState, q: &InvestorQuery) -> Result<TransitionResult> {
    let (path, capital) = drift_investor(spec, bg, q)?;
    let gr = g_r(spec, bg, q)?;
    let yi = shifted_investor_capital(spec, bg, &q.initial)?;
    let yf = shifted_investor_capital(spec, bg, &q.target)?;
    let s2 = spec.sigma_xhat2;
    let alpha_eff = (q.alpha + 0.5 * s2 * yf * yi) * (mid_f(bg, q) / (2.0 * s2)).sqrt() + gr;
    let distance = (yf - yi).abs();
    let drift = path + capital;
    Ok(TransitionResult {
        log_value: drift - alpha_eff * distance,
        drift_d: drift,
        drift_parts: DriftParts::Investor { path, capital },
        alpha_eff,
        distance_term: distance,
        shifted_initial: yi,
        shifted_target: yf,
    })
}

/// Investor transition function at elapsed time `t`.
pub fn t2(spec: &ModelSpec, bg: &BackgroundState, q: &InvestorQuery, t: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::OutOfRange(format!("time {t} must be positive")));
    }
    let (path, capital) = drift_investor(spec, bg, q)?;
    let gr = g_r(spec, bg, q)?;
    let yi = shifted_investor_capital(spec, bg, &q.initial)?;
    let yf = shifted_investor_capital(spec, bg, &q.target)?;
    let s2 = spec.sigma_xhat2;
    let log = -t * gr + path + capital - 0.5 * s2 * t * yf * yi - mid_f(bg, q) * (yf - yi).powi(2) / (2.0 * t * s2);
    Ok(log.exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{sloped_spec, solve};

    fn firm(k: f64, x: f64) -> FirmCoord {
        FirmCoord::new(k, x, 1.0)
    }

    fn query(a: FirmCoord, b: FirmCoord) -> FirmQuery {
        FirmQuery {
            initial: a,
            target: b,
            alpha: 1.0,
        }
    }

    #[test]
    fn g1_is_drift_minus_weighted_distance() {
        let spec = sloped_spec(0.3);
        let bg = solve(&spec);
        let r = g1(&spec, &bg, &query(firm(0.8, -0.5), firm(1.6, 0.4))).unwrap();
        let DriftParts::Firm { d1, d2, d3 } = r.drift_parts else {
            panic!()
        };
        assert!((r.drift_d - (d1 + d2 + d3)).abs() < 1e-14);
        assert!((r.log_value - (r.drift_d - r.alpha_eff * r.distance_term)).abs() < 1e-12);
    }

    #[test]
    fn d1_for_linear_return_is_slope_times_displacement() {
        let spec = sloped_spec(0.3);
        let bg = solve(&spec);
        let (d1, _, _) = drift_firm(&spec, &bg, &query(firm(1.0, -0.75), firm(1.0, 0.5))).unwrap();
        assert!((d1 - 0.3 * 1.25 / spec.sigma_x2).abs() < 1e-12, "{d1}");
    }

    #[test]
    fn endpoint_swap_parity() {
        let spec = sloped_spec(0.3);
        let bg = solve(&spec);
        let (a, b) = (firm(0.7, -0.6), firm(1.9, 0.8));
        let fwd = drift_firm(&spec, &bg, &query(a, b)).unwrap();
        let back = drift_firm(&spec, &bg, &query(b, a)).unwrap();
        assert!((fwd.0 + back.0).abs() < 1e-12);
        assert!((fwd.1 + back.1).abs() < 1e-12);
        assert!((fwd.2 - back.2).abs() < 1e-12);
    }

    #[test]
    fn coincident_endpoints_have_unit_weight() {
        let spec = sloped_spec(0.0);
        let bg = solve(&spec);
        let c = firm(bg.k_x[4], 0.0);
        let r = g1(&spec, &bg, &query(c, c)).unwrap();
        assert!(r.log_value.abs() < 1e-14, "{}", r.log_value);
        let c = InvestorCoord::new(1.0, 0.25);
        let q = InvestorQuery {
            initial: c,
            target: c,
            alpha: 1.0,
        };
        assert!(g2(&spec, &bg, &q).unwrap().log_value.abs() < 1e-14);
    }

    #[test]
    fn g1_decays_with_distance_in_capital() {
        let spec = sloped_spec(0.0);
        let bg = solve(&spec);
        let kx = bg.k_x[4];
        let mut last = f64::INFINITY;
        for dk in [0.5, 1.0, 2.0, 3.0] {
            let v = g1(&spec, &bg, &query(firm(kx, 0.0), firm(kx + dk, 0.0)))
                .unwrap()
                .log_value;
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn t1_vanishes_at_short_times() {
        let spec = sloped_spec(0.3);
        let bg = solve(&spec);
        let q = query(firm(0.8, -0.5), firm(1.2, 0.5));
        assert!(t1(&spec, &bg, &q, 1e-3).unwrap() < 1e-100);
        assert!(t1(&spec, &bg, &q, 0.0).is_err());
    }

    #[test]
    fn exact_laplace_transform_matches_quadrature() {
        let spec = sloped_spec(0.3);
        let bg = solve(&spec);
        let q = query(firm(0.8, -0.5), firm(1.2, 0.5));
        // t = e^u, trapezoid in u.
        let (lo, hi, n) = (-12.0_f64, 6.0_f64, 4_000);
        let h = (hi - lo) / n as f64;
        let mut acc = 0.0;
        for i in 0..=n {
            let u = lo + i as f64 * h;
            let t = u.exp();
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            acc += w * (-q.alpha * t).exp() * t1(&spec, &bg, &q, t).unwrap() * t;
        }
        acc *= h;
        let exact = g1_laplace_exact(&spec, &bg, &q).unwrap();
        assert!(((acc - exact) / exact).abs() < 1e-8, "{acc} vs {exact}");
    }

    #[test]
    fn investor_path_rejects_sign_change_of_f() {
        let spec = sloped_spec(0.3);
        let mut bg = solve(&spec);
        bg.f_x[5] = -bg.f_x[5];
        let q = InvestorQuery {
            initial: InvestorCoord::new(1.0, -0.5),
            target: InvestorCoord::new(1.0, 0.9),
            alpha: 1.0,
        };
        assert!(matches!(g2(&spec, &bg, &q), Err(Error::ZeroF { .. })));
    }

    #[test]
    fn t2_vanishes_at_short_times_for_distinct_capital() {
        let spec = sloped_spec(0.3);
        let bg = solve(&spec);
        let q = InvestorQuery {
            initial: InvestorCoord::new(1.0, -0.5),
            target: InvestorCoord::new(3.0, 0.5),
            alpha: 1.0,
        };
        assert!(t2(&spec, &bg, &q, 1e-4).unwrap() < 1e-100);
    }
}
