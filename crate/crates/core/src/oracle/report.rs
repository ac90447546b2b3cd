use serde::{Deserialize, Serialize};

use crate::background::BackgroundState;
use crate::error::{Error, Result};
use crate::model::{allocation_scale, FirmCoord, InvestorCoord, ModelSpec};
use crate::numerics::{interp, trapezoid_fn};
use crate::transition::{g1, g1_laplace_exact, g2, FirmQuery, InvestorQuery};

use super::fp::{fp_evolve, resolvent, FpSolution, Operator2d, OperatorKind, PdeSetup};
use super::laplace_numeric;

/// Fraction of each axis trimmed from both ends to form the bulk region.
const BULK_TRIM: f64 = 0.2;
const TREND_STEPS: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionError {
    pub region: String,
    pub nodes: usize,
    /// `‖o − c·g‖₂ / ‖o‖₂` with the least-squares scale `c`.
    pub rel_l2: f64,
    /// `max |o − c·g| / max |o|`.
    pub max_rel: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub operator: OperatorKind,
    pub alpha: f64,
    /// Source in PDE coordinates (sector, capital variable).
    pub source: (f64, f64),
    pub dt: f64,
    pub horizon: f64,
    /// Least-squares scale applied to the closed form on the bulk.
    pub scale: f64,
    pub regions: Vec<RegionError>,
    /// Time-stepped transform against the direct resolvent solve, bulk.
    pub resolvent_rel_l2: f64,
    /// Oracle against the exact transform of the time-domain closed form, bulk.
    pub exact_transform_rel_l2: Option<f64>,
    pub mass_drift: f64,
    pub clipped: usize,
    /// Source nodes carry the unresolved initial delta and are left out.
    pub excluded_source_nodes: usize,
}

/// Oracle and closed-form kernels on the PDE grid, in agent variables.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelComparison {
    pub report: OracleReport,
    pub a_nodes: Vec<f64>,
    pub b_nodes: Vec<f64>,
    pub oracle: Vec<f64>,
    /// `NaN` where the closed form is undefined.
    pub closed: Vec<f64>,
    pub resolvent: Vec<f64>,
}

fn bulk_mask(na: usize, nb: usize) -> Vec<bool> {
    let inside = |i: usize, n: usize| {
        let t = i as f64 / (n - 1) as f64;
        (BULK_TRIM - 1e-12..=1.0 - BULK_TRIM + 1e-12).contains(&t)
    };
    (0..na)
        .flat_map(|i| (0..nb).map(move |j| inside(i, na) && inside(j, nb)))
        .collect()
}

/// Least-squares scale `c` of `closed` onto `oracle` over `mask`, with the
/// relative L2 and max errors of `oracle − c·closed`.
pub fn compare_bulk(oracle: &[f64], closed: &[f64], mask: &[bool]) -> (f64, f64, f64) {
    let sel = || {
        oracle
            .iter()
            .zip(closed)
            .zip(mask)
            .filter(|((o, g), m)| **m && o.is_finite() && g.is_finite())
            .map(|((o, g), _)| (*o, *g))
    };
    let (og, gg) = sel().fold((0.0, 0.0), |(a, b), (o, g)| (a + o * g, b + g * g));
    let c = if gg > 0.0 { og / gg } else { 0.0 };
    let (mut num, mut den, mut max_err, mut max_o) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for (o, g) in sel() {
        num += (o - c * g).powi(2);
        den += o * o;
        max_err = max_err.max((o - c * g).abs());
        max_o = max_o.max(o.abs());
    }
    let safe = |a: f64, b: f64| if b > 0.0 { a / b } else { f64::INFINITY };
    (c, safe(num.sqrt(), den.sqrt()), safe(max_err, max_o))
}

fn check_axes(bg: &BackgroundState, setup: &PdeSetup) -> Result<()> {
    setup.validate()?;
    let (lo, hi) = bg.grid.x_range();
    if setup.x_axis.min < lo || setup.x_axis.max > hi {
        return Err(Error::InvalidGrid("PDE sector axis leaves the background grid".into()));
    }
    Ok(())
}

fn competition(bg: &BackgroundState, k: f64, x: f64) -> f64 {
    let n = interp(bg.grid.x(), &bg.psi2_x, x);
    n * (interp(bg.grid.x(), &bg.k_x, x) - k) / k
}

/// Firm kernel operator on `(X, K)`.
pub fn firm_operator(
    spec: &ModelSpec,
    bg: &BackgroundState,
    setup: &PdeSetup,
    initial: &FirmCoord,
) -> Result<Operator2d> {
    check_axes(bg, setup)?;
    if !(setup.capital_axis.min > 0.0) {
        return Err(Error::InvalidGrid("firm capital axis must be positive".into()));
    }
    let fs = &spec.functions;
    let s = initial.s;
    let xs = setup.x_axis.nodes();
    let scales = xs
        .iter()
        .map(|x| allocation_scale(spec, bg, *x))
        .collect::<Result<Vec<_>>>()?;
    let c_i = competition(bg, initial.k, initial.x);
    let pot = |x: f64, k: f64| -> f64 {
        let scale = interp(&xs, &scales, x);
        let kx = interp(bg.grid.x(), &bg.k_x, x);
        match setup.operator {
            OperatorKind::Firm => {
                let a = fs.f2.eval(s, fs.big_r.eval(kx, x)) * scale;
                bg.d_const + spec.tau * (competition(bg, k, x) + c_i) + (k - a).powi(2) / (2.0 * spec.sigma_k2)
            }
            _ => {
                let rj = fs.big_r.jet(k, x);
                let a = fs.f2.eval(s, rj.v) * scale;
                let da = fs.f2.jet(s, rj.v).d1 * rj.dk * scale;
                bg.d_const
                    + 2.0 * spec.tau * competition(bg, k, x)
                    + (k - a).powi(2) / (2.0 * spec.sigma_k2)
                    + 0.5 * (1.0 - da)
            }
        }
    };
    Ok(Operator2d::new(
        setup.x_axis,
        setup.capital_axis,
        0.5 * spec.sigma_x2,
        0.5 * spec.sigma_k2,
        pot,
        setup.boundary,
    ))
}

/// Log of the trend factor removed by the change of variables, for firms:
/// `∫_{X_i}^{X} ∇R H/σ_X² − ∫_{K_min}^{K} (K′ − A(K′, X)) dK′`.
fn firm_trend(spec: &ModelSpec, bg: &BackgroundState, initial: &FirmCoord, k: f64, x: f64) -> Result<f64> {
    let fs = &spec.functions;
    let path = trapezoid_fn(initial.x, x, TREND_STEPS, |xx| {
        let kx = interp(bg.grid.x(), &bg.k_x, xx);
        fs.big_r.jet(kx, xx).dx * fs.h.eval(kx) / spec.sigma_x2
    });
    let scale = allocation_scale(spec, bg, x)?;
    let kmin = bg.grid.k_range().0;
    let cap = trapezoid_fn(kmin, k, TREND_STEPS, |kk| {
        kk - fs.f2.eval(initial.s, fs.big_r.eval(kk, x)) * scale
    });
    Ok(path - cap)
}

fn transform_nodes(sol: &FpSolution, alpha: f64) -> Result<Vec<f64>> {
    let n = sol.snapshots[0].len();
    (0..n)
        .map(|idx| laplace_numeric(&sol.times, &sol.series(idx), alpha))
        .collect()
}

struct Assembled {
    report: OracleReport,
    oracle: Vec<f64>,
    resolvent: Vec<f64>,
}

fn assemble(
    op: &Operator2d,
    setup: &PdeSetup,
    source: (f64, f64),
    alpha: f64,
    trend: &[f64],
    closed: &[f64],
) -> Result<Assembled> {
    let delta = op.delta(source.0, source.1)?;
    let excluded: Vec<bool> = delta.iter().map(|d| *d != 0.0).collect();
    let sol = fp_evolve(op, setup, delta.clone())?;
    let lt = transform_nodes(&sol, alpha)?;
    let res = resolvent(op, alpha, &delta)?;
    let oracle: Vec<f64> = lt.iter().zip(trend).map(|(v, t)| v * t.exp()).collect();
    let resolved: Vec<f64> = res.iter().zip(trend).map(|(v, t)| v * t.exp()).collect();

    let bulk: Vec<bool> = bulk_mask(op.na(), op.nb())
        .into_iter()
        .zip(&excluded)
        .map(|(b, e)| b && !e)
        .collect();
    let full: Vec<bool> = excluded.iter().map(|e| !e).collect();
    let (scale, bulk_l2, bulk_max) = compare_bulk(&oracle, closed, &bulk);
    let (_, full_l2, full_max) = compare_bulk(&oracle, closed, &full);
    let (_, res_l2, _) = compare_bulk(&oracle, &resolved, &bulk);
    let count = |m: &[bool]| m.iter().zip(closed).filter(|(m, g)| **m && g.is_finite()).count();
    let m0 = sol.mass[0];
    let report = OracleReport {
        operator: setup.operator,
        alpha,
        source,
        dt: setup.dt,
        horizon: setup.horizon,
        scale,
        regions: vec![
            RegionError {
                region: "bulk".into(),
                nodes: count(&bulk),
                rel_l2: bulk_l2,
                max_rel: bulk_max,
            },
            RegionError {
                region: "full".into(),
                nodes: count(&full),
                rel_l2: full_l2,
                max_rel: full_max,
            },
        ],
        resolvent_rel_l2: res_l2,
        exact_transform_rel_l2: None,
        mass_drift: (sol.mass.last().copied().unwrap_or(m0) - m0).abs() / m0,
        clipped: sol.clipped,
        excluded_source_nodes: excluded.iter().filter(|e| **e).count(),
    };
    Ok(Assembled {
        report,
        oracle,
        resolvent: resolved,
    })
}

/// Firm kernel from `initial`: Fokker–Planck transform against `G1`.
pub fn firm_comparison(
    spec: &ModelSpec,
    bg: &BackgroundState,
    setup: &PdeSetup,
    initial: &FirmCoord,
    alpha: f64,
) -> Result<KernelComparison> {
    if setup.operator == OperatorKind::Investor {
        return Err(Error::InvalidSpec("firm comparison needs a firm operator".into()));
    }
    let op = firm_operator(spec, bg, setup, initial)?;
    let base = firm_trend(spec, bg, initial, initial.k, initial.x)?;
    let (mut trend, mut closed, mut exact) = (Vec::new(), Vec::new(), Vec::new());
    for &x in &op.a_nodes {
        for &k in &op.b_nodes {
            trend.push(firm_trend(spec, bg, initial, k, x)? - base);
            let q = FirmQuery {
                initial: *initial,
                target: FirmCoord::new(k, x, initial.s),
                alpha,
            };
            closed.push(g1(spec, bg, &q).map(|r| r.value()).unwrap_or(f64::NAN));
            exact.push(g1_laplace_exact(spec, bg, &q).unwrap_or(f64::NAN));
        }
    }
    let asm = assemble(&op, setup, (initial.x, initial.k), alpha, &trend, &closed)?;
    let mut report = asm.report;
    let bulk: Vec<bool> = bulk_mask(op.na(), op.nb());
    report.exact_transform_rel_l2 = Some(compare_bulk(&asm.oracle, &exact, &bulk).1);
    Ok(KernelComparison {
        report,
        a_nodes: op.a_nodes.clone(),
        b_nodes: op.b_nodes.clone(),
        oracle: asm.oracle,
        closed,
        resolvent: asm.resolvent,
    })
}

/// Investor potential `y²/4` plus the local relative long-term return.
fn relative_return(spec: &ModelSpec, bg: &BackgroundState, x: f64) -> f64 {
    let at = |v: &[f64]| interp(bg.grid.x(), v, x);
    let (f, g, dg, big_f) = (at(&bg.f_x), at(&bg.g_x), at(&bg.grad_g_x), at(&bg.big_f_x));
    let s2 = spec.sigma_xhat2;
    (g * g + s2 * (f + dg - spec.sigma_khat2 * big_f * big_f / (2.0 * f * f))) / (s2 * f.abs())
}

/// `y = (K̂ + σ_K̂² F/f²) |f|^{1/2} / σ_K̂` and its inverse.
struct YMap<'a> {
    spec: &'a ModelSpec,
    bg: &'a BackgroundState,
}

impl YMap<'_> {
    fn parts(&self, x: f64) -> Result<(f64, f64)> {
        let f = interp(self.bg.grid.x(), &self.bg.f_x, x);
        if f == 0.0 || !f.is_finite() {
            return Err(Error::ZeroF { x });
        }
        let big_f = interp(self.bg.grid.x(), &self.bg.big_f_x, x);
        let shift = self.spec.sigma_khat2 * big_f / (f * f);
        Ok((shift, f.abs().sqrt() / self.spec.sigma_khat2.sqrt()))
    }

    fn y(&self, khat: f64, x: f64) -> Result<f64> {
        let (shift, factor) = self.parts(x)?;
        Ok((khat + shift) * factor)
    }

    fn khat(&self, y: f64, x: f64) -> Result<f64> {
        let (shift, factor) = self.parts(x)?;
        Ok(y / factor - shift)
    }
}

/// Investor kernel operator on `(X̂, y)`.
pub fn investor_operator(spec: &ModelSpec, bg: &BackgroundState, setup: &PdeSetup) -> Result<Operator2d> {
    check_axes(bg, setup)?;
    let ymap = YMap { spec, bg };
    for x in setup.x_axis.nodes() {
        ymap.parts(x)?;
    }
    Ok(Operator2d::new(
        setup.x_axis,
        setup.capital_axis,
        0.5 * spec.sigma_xhat2,
        1.0,
        |x, y| y * y / 4.0 + relative_return(spec, bg, x),
        setup.boundary,
    ))
}

/// Investor kernel from `initial`: Fokker–Planck transform against `G2`.
pub fn investor_comparison(
    spec: &ModelSpec,
    bg: &BackgroundState,
    setup: &PdeSetup,
    initial: &InvestorCoord,
    alpha: f64,
) -> Result<KernelComparison> {
    if setup.operator != OperatorKind::Investor {
        return Err(Error::InvalidSpec(
            "investor comparison needs the investor operator".into(),
        ));
    }
    let op = investor_operator(spec, bg, setup)?;
    let ymap = YMap { spec, bg };
    let f_at = |x: f64| interp(bg.grid.x(), &bg.f_x, x);
    let trend_at = |khat: f64, x: f64| {
        let path = trapezoid_fn(initial.xhat, x, TREND_STEPS, |xx| interp(bg.grid.x(), &bg.g_x, xx));
        path / spec.sigma_xhat2 + khat * khat * f_at(x) / spec.sigma_khat2
    };
    let base = trend_at(initial.khat, initial.xhat);
    let (mut trend, mut closed) = (Vec::new(), Vec::new());
    for &x in &op.a_nodes {
        for &y in &op.b_nodes {
            let khat = ymap.khat(y, x)?;
            trend.push(trend_at(khat, x) - base);
            let q = InvestorQuery {
                initial: *initial,
                target: InvestorCoord::new(khat, x),
                alpha,
            };
            closed.push(g2(spec, bg, &q).map(|r| r.value()).unwrap_or(f64::NAN));
        }
    }
    let source = (initial.xhat, ymap.y(initial.khat, initial.xhat)?);
    let asm = assemble(&op, setup, source, alpha, &trend, &closed)?;
    Ok(KernelComparison {
        report: asm.report,
        a_nodes: op.a_nodes.clone(),
        b_nodes: op.b_nodes.clone(),
        oracle: asm.oracle,
        closed,
        resolvent: asm.resolvent,
    })
}
