//! Two-agent transition functions with a single interaction crossing.

use serde::{Deserialize, Serialize};

use crate::background::BackgroundState;
use crate::error::{Error, Result};
use crate::model::{eval_f2hat, f2_bar, r_norm, FirmCoord, InvestorCoord, ModelSpec};
use crate::numerics::interp;
use crate::transition::{g1, g2, FirmQuery, InvestorQuery};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PairQuery {
    FirmFirm {
        a: FirmQuery,
        b: FirmQuery,
        #[serde(default)]
        crossing: Option<f64>,
    },
    FirmInvestor {
        a: FirmQuery,
        b: InvestorQuery,
        #[serde(default)]
        crossing: Option<f64>,
    },
    InvestorInvestor {
        a: InvestorQuery,
        b: InvestorQuery,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexKind {
    S11,
    S12,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VertexValue {
    pub kind: VertexKind,
    pub value: f64,
    /// Contributions attributed to agents `a` and `b`; they sum to `value`.
    pub contributions: (f64, f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    /// Corrected joint transition function.
    pub value: f64,
    /// Product of the one-agent functions.
    pub product: f64,
    /// Signed correction added to the product.
    pub correction: f64,
    pub vertex: Option<VertexValue>,
    /// Routed factors `Ĝ` of agents `a` and `b`.
    pub routed: (f64, f64),
}

/// Crossing sector: the mean of the two path midpoints unless given.
fn crossing_sector(xa: (f64, f64), xb: (f64, f64), explicit: Option<f64>) -> f64 {
    explicit.unwrap_or(0.25 * (xa.0 + xa.1 + xb.0 + xb.1))
}

fn firm_crossing(q: &FirmQuery, xc: f64) -> FirmCoord {
    FirmCoord {
        k: 0.5 * (q.initial.k + q.target.k),
        x: xc,
        s: q.initial.s,
    }
}

fn investor_crossing(q: &InvestorQuery, xc: f64) -> InvestorCoord {
    InvestorCoord {
        khat: 0.5 * (q.initial.khat + q.target.khat),
        xhat: xc,
    }
}

/// Transition routed through the crossing: `G(target ← c) · G(c ← initial)`.
fn routed_firm(spec: &ModelSpec, bg: &BackgroundState, q: &FirmQuery, c: FirmCoord) -> Result<f64> {
    let first = FirmQuery { target: c, ..*q };
    let second = FirmQuery { initial: c, ..*q };
    Ok((g1(spec, bg, &first)?.log_value + g1(spec, bg, &second)?.log_value).exp())
}

fn routed_investor(spec: &ModelSpec, bg: &BackgroundState, q: &InvestorQuery, c: InvestorCoord) -> Result<f64> {
    let first = InvestorQuery { target: c, ..*q };
    let second = InvestorQuery { initial: c, ..*q };
    Ok((g2(spec, bg, &first)?.log_value + g2(spec, bg, &second)?.log_value).exp())
}

fn khat_at(bg: &BackgroundState, x: f64) -> f64 {
    interp(bg.grid.x(), &bg.khat_x, x)
}

/// `∂_K F̂2` by central differences.
fn f2hat_dk(spec: &ModelSpec, bg: &BackgroundState, c: &FirmCoord, h: f64) -> Result<f64> {
    let up = eval_f2hat(spec, bg, &FirmCoord { k: c.k + h, ..*c })?;
    let down = eval_f2hat(spec, bg, &FirmCoord { k: c.k - h, ..*c })?;
    Ok((up - down) / (2.0 * h))
}

fn capital_step(k: f64) -> f64 {
    1e-4 * k.abs().max(1e-3)
}

fn effective_tau(spec: &ModelSpec, bg: &BackgroundState, c: &FirmCoord) -> f64 {
    if spec.tau_capital_dependent {
        spec.tau * interp(bg.grid.x(), &bg.k_x, c.x) / c.k
    } else {
        spec.tau
    }
}

/// Firm–firm vertex `I = 2τ + (1/ε) ∇_K(F̂2 F̂2′) K̂` at the crossing.
pub fn vertex_s11(
    spec: &ModelSpec,
    bg: &BackgroundState,
    a: &FirmQuery,
    b: &FirmQuery,
    crossing: Option<f64>,
) -> Result<VertexValue> {
    let xc = crossing_sector((a.initial.x, a.target.x), (b.initial.x, b.target.x), crossing);
    let (ca, cb) = (firm_crossing(a, xc), firm_crossing(b, xc));
    vertex_s11_at(spec, bg, &ca, &cb, capital_step(ca.k), capital_step(cb.k))
}

/// [`vertex_s11`] at explicit crossing coordinates and differencing steps.
pub fn vertex_s11_at(
    spec: &ModelSpec,
    bg: &BackgroundState,
    ca: &FirmCoord,
    cb: &FirmCoord,
    ha: f64,
    hb: f64,
) -> Result<VertexValue> {
    let khat = khat_at(bg, ca.x);
    let (fa, fb) = (eval_f2hat(spec, bg, ca)?, eval_f2hat(spec, bg, cb)?);
    let (da, db) = (f2hat_dk(spec, bg, ca, ha)?, f2hat_dk(spec, bg, cb, hb)?);
    let part_a = effective_tau(spec, bg, ca) + 0.5 * da * fb * khat / spec.epsilon;
    let part_b = effective_tau(spec, bg, cb) + 0.5 * fa * db * khat / spec.epsilon;
    Ok(VertexValue {
        kind: VertexKind::S11,
        value: part_a + part_b,
        contributions: (part_a, part_b),
    })
}

/// Firm-level short-term return and its sector mean weighted by `F̂2‖Ψ‖²`.
fn firm_return_deviation(spec: &ModelSpec, bg: &BackgroundState, c: &FirmCoord) -> Result<f64> {
    let fs = &spec.functions;
    let grid = &bg.grid;
    let r_total = r_norm(spec, grid, &bg.psi2_kx);
    if !(r_total > 0.0) {
        return Err(Error::ZeroDenominator("total return normalizer".into()));
    }
    let n = interp(grid.x(), &bg.psi2_x, c.x);
    let kx = interp(grid.x(), &bg.k_x, c.x);
    let khat = khat_at(bg, c.x);
    let value = |k: f64, share: f64| {
        let big_r = fs.big_r.eval(k, c.x);
        fs.r.eval(k, c.x) - spec.gamma * kx * n / k + fs.f1_with_gamma(big_r / r_total, share * khat / k - 1.0)
    };
    let (phi, norm) = sector_profile(bg, c.x)?;
    let den: f64 = grid
        .k()
        .iter()
        .zip(grid.wk())
        .zip(&phi)
        .map(|((k, w), p)| w * p * f2_bar(spec, fs.big_r.eval(*k, c.x)))
        .sum();
    if !(den > 0.0) {
        return Err(Error::ZeroDenominator(format!("firm density vanishes at X = {}", c.x)));
    }
    let mut mean = 0.0;
    for ((&k, w), p) in grid.k().iter().zip(grid.wk()).zip(&phi) {
        let weight = f2_bar(spec, fs.big_r.eval(k, c.x)) / den;
        mean += w * p * weight * value(k, weight / norm);
    }
    let own_share = eval_f2hat(spec, bg, c)?;
    Ok(value(c.k, own_share) - mean)
}

/// Capital profile at sector `x` normalized to unit mass, with the firm count.
fn sector_profile(bg: &BackgroundState, x: f64) -> Result<(Vec<f64>, f64)> {
    let grid = &bg.grid;
    let n = interp(grid.x(), &bg.psi2_x, x);
    if !(n > 0.0) {
        return Err(Error::ZeroDenominator(format!("empty sector at X = {x}")));
    }
    let (j, w) = crate::numerics::bracket(grid.x(), x);
    let phi = (0..grid.nk())
        .map(|m| ((1.0 - w) * bg.psi2_kx[j][m] + w * bg.psi2_kx[j + 1][m]) / n)
        .collect();
    Ok((phi, n))
}

/// `Δg(K, X)/N(X)`.
fn drift_deviation_density(spec: &ModelSpec, bg: &BackgroundState, k: f64, x: f64) -> Result<f64> {
    let fs = &spec.functions;
    let grid = &bg.grid;
    let r_total = r_norm(spec, grid, &bg.psi2_kx);
    let value = |k: f64| {
        let rj = fs.big_r.jet(k, x);
        fs.f0.jet(rj.v).d1 * rj.dx + spec.nu * fs.f1.jet(rj.v / r_total).d1 * rj.dx / r_total
    };
    let (phi, n) = sector_profile(bg, x)?;
    let mean: f64 = grid
        .k()
        .iter()
        .zip(grid.wk())
        .zip(&phi)
        .map(|((k, w), p)| w * p * value(*k))
        .sum();
    Ok((value(k) - mean) / n)
}

/// Firm–investor vertex at the crossing.
pub fn vertex_s12(
    spec: &ModelSpec,
    bg: &BackgroundState,
    a: &FirmQuery,
    b: &InvestorQuery,
    crossing: Option<f64>,
) -> Result<VertexValue> {
    let xc = crossing_sector((a.initial.x, a.target.x), (b.initial.xhat, b.target.xhat), crossing);
    let ca = firm_crossing(a, xc);
    vertex_s12_at(spec, bg, &ca, capital_step(ca.k), 0.5 * bg.grid.x_spacing().min)
}

/// [`vertex_s12`] at an explicit firm crossing coordinate and differencing steps.
pub fn vertex_s12_at(spec: &ModelSpec, bg: &BackgroundState, c: &FirmCoord, hk: f64, hx: f64) -> Result<VertexValue> {
    let khat = khat_at(bg, c.x);
    let attract = f2hat_dk(spec, bg, c, hk)? * khat / spec.epsilon;
    let kx = interp(bg.grid.x(), &bg.k_x, c.x);
    let short = (firm_return_deviation(spec, bg, c)? - spec.gamma * c.k / kx) / spec.epsilon;
    let (lo, hi) = bg.grid.x_range();
    let (xm, xp) = ((c.x - hx).max(lo), (c.x + hx).min(hi));
    let long = (drift_deviation_density(spec, bg, c.k, xp)? - drift_deviation_density(spec, bg, c.k, xm)?) / (xp - xm);
    Ok(VertexValue {
        kind: VertexKind::S12,
        value: attract + short + long,
        contributions: (attract + short, long),
    })
}

/// Joint transition function of a pair of agents.
pub fn pair_transition(spec: &ModelSpec, bg: &BackgroundState, pq: &PairQuery) -> Result<PairResult> {
    match pq {
        PairQuery::FirmFirm { a, b, crossing } => g11(spec, bg, a, b, *crossing),
        PairQuery::FirmInvestor { a, b, crossing } => g12(spec, bg, a, b, *crossing),
        PairQuery::InvestorInvestor { a, b } => g22(spec, bg, a, b),
    }
}

/// `G11 = G1 G1 − I Ĝ1 Ĝ1`.
pub fn g11(
    spec: &ModelSpec,
    bg: &BackgroundState,
    a: &FirmQuery,
    b: &FirmQuery,
    crossing: Option<f64>,
) -> Result<PairResult> {
    let product = g1(spec, bg, a)?.value() * g1(spec, bg, b)?.value();
    let vertex = vertex_s11(spec, bg, a, b, crossing)?;
    let xc = crossing_sector((a.initial.x, a.target.x), (b.initial.x, b.target.x), crossing);
    let ra = routed_firm(spec, bg, a, firm_crossing(a, xc))?;
    let rb = routed_firm(spec, bg, b, firm_crossing(b, xc))?;
    let correction = -vertex.value * ra * rb;
    Ok(PairResult {
        value: product + correction,
        product,
        correction,
        vertex: Some(vertex),
        routed: (ra, rb),
    })
}

/// `G12 = G1 G2 + S12 Ĝ1 Ĝ2`.
pub fn g12(
    spec: &ModelSpec,
    bg: &BackgroundState,
    a: &FirmQuery,
    b: &InvestorQuery,
    crossing: Option<f64>,
) -> Result<PairResult> {
    let product = g1(spec, bg, a)?.value() * g2(spec, bg, b)?.value();
    let vertex = vertex_s12(spec, bg, a, b, crossing)?;
    let xc = crossing_sector((a.initial.x, a.target.x), (b.initial.xhat, b.target.xhat), crossing);
    let ra = routed_firm(spec, bg, a, firm_crossing(a, xc))?;
    let rb = routed_investor(spec, bg, b, investor_crossing(b, xc))?;
    let correction = vertex.value * ra * rb;
    Ok(PairResult {
        value: product + correction,
        product,
        correction,
        vertex: Some(vertex),
        routed: (ra, rb),
    })
}

/// `G22 = G2 G2`; investors do not interact at this order.
pub fn g22(spec: &ModelSpec, bg: &BackgroundState, a: &InvestorQuery, b: &InvestorQuery) -> Result<PairResult> {
    let product = g2(spec, bg, a)?.value() * g2(spec, bg, b)?.value();
    Ok(PairResult {
        value: product,
        product,
        correction: 0.0,
        vertex: None,
        routed: (1.0, 1.0),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Curve, F2Spec, Surface};
    use crate::testutil::{sloped_spec, solve};

    fn fq(ki: f64, xi: f64, kf: f64, xf: f64) -> FirmQuery {
        FirmQuery {
            initial: FirmCoord::new(ki, xi, 1.0),
            target: FirmCoord::new(kf, xf, 1.0),
            alpha: 1.0,
        }
    }

    fn iq(ki: f64, xi: f64, kf: f64, xf: f64) -> InvestorQuery {
        InvestorQuery {
            initial: InvestorCoord::new(ki, xi),
            target: InvestorCoord::new(kf, xf),
            alpha: 1.0,
        }
    }

    #[test]
    fn constant_attractiveness_leaves_pure_repulsion() {
        let spec = sloped_spec(0.3);
        let bg = solve(&spec);
        let (a, b) = (fq(0.8, -0.5, 1.0, 0.5), fq(1.5, 0.5, 1.2, -0.5));
        let v = vertex_s11(&spec, &bg, &a, &b, None).unwrap();
        assert!((v.value - 2.0 * spec.tau).abs() < 1e-12);
        let r = g11(&spec, &bg, &a, &b, None).unwrap();
        let g1a = g1(&spec, &bg, &a).unwrap().value();
        let g1b = g1(&spec, &bg, &b).unwrap().value();
        assert!((r.product - g1a * g1b).abs() < 1e-15);
        assert!((r.value - (r.product - v.value * r.routed.0 * r.routed.1)).abs() < 1e-15);
    }

    #[test]
    fn capital_dependent_repulsion_favours_the_smaller_firm() {
        let mut spec = sloped_spec(0.3);
        spec.tau_capital_dependent = true;
        let bg = solve(&spec);
        let (a, b) = (fq(0.5, -0.5, 0.5, 0.5), fq(2.5, 0.5, 2.5, -0.5));
        let v = vertex_s11(&spec, &bg, &a, &b, None).unwrap();
        assert!(v.contributions.0 > v.contributions.1);
        assert!((v.contributions.0 + v.contributions.1 - v.value).abs() < 1e-14);
    }

    #[test]
    fn capital_derivative_is_step_converged() {
        let mut spec = sloped_spec(0.3);
        spec.functions.big_r = Surface::Affine {
            intercept: 1.0,
            k: 0.4,
            x: 0.3,
        };
        spec.functions.f2 = F2Spec::new(Curve::Exponential { scale: 1.0, rate: 0.5 });
        let bg = solve(&spec);
        let ca = FirmCoord::new(0.9, 0.1, 1.0);
        let cb = FirmCoord::new(1.7, 0.1, 1.0);
        let coarse = vertex_s11_at(&spec, &bg, &ca, &cb, 1e-4, 1e-4).unwrap().value;
        let fine = vertex_s11_at(&spec, &bg, &ca, &cb, 5e-5, 5e-5).unwrap().value;
        assert!((coarse - fine).abs() < 1e-5);
        assert!((coarse - 2.0 * spec.tau).abs() > 1e-3);
    }

    #[test]
    fn firm_investor_vertex_vanishes_for_homogeneous_firms() {
        let mut spec = sloped_spec(0.3);
        spec.gamma = 0.0;
        let bg = solve(&spec);
        let (a, b) = (fq(0.8, -0.5, 1.0, 0.5), iq(1.0, 0.5, 2.0, -0.5));
        let v = vertex_s12(&spec, &bg, &a, &b, None).unwrap();
        assert!(v.value.abs() < 1e-10, "{}", v.value);
        let r = g12(&spec, &bg, &a, &b, None).unwrap();
        assert!((r.value - r.product).abs() < 1e-10 * r.product.abs().max(1e-300));
    }

    #[test]
    fn investors_do_not_interact() {
        let spec = sloped_spec(0.3);
        let bg = solve(&spec);
        let (a, b) = (iq(1.0, -0.5, 2.0, 0.5), iq(0.5, 0.5, 0.7, 0.0));
        let r = pair_transition(&spec, &bg, &PairQuery::InvestorInvestor { a, b }).unwrap();
        let expect = g2(&spec, &bg, &a).unwrap().value() * g2(&spec, &bg, &b).unwrap().value();
        assert_eq!(r.value, expect);
        assert!(r.vertex.is_none());
    }
}
