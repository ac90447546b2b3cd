use crate::background::BackgroundState;
use crate::error::{Error, Result};
use crate::numerics::bracket;

use super::{FirmCoord, ModelSpec, SectorGrid};

/// `s`-averaged attractiveness `Σ_s w_s F2(s, v)`.
pub fn f2_bar(spec: &ModelSpec, v: f64) -> f64 {
    spec.s_values
        .iter()
        .zip(&spec.s_weights)
        .map(|(s, w)| w * spec.functions.f2.eval(*s, v))
        .sum()
}

/// Capital profile of one sector, normalized so that `∫φ dK = 1`.
#[derive(Debug, Clone, Copy)]
pub struct SectorSlice<'a> {
    pub x: f64,
    pub k_nodes: &'a [f64],
    pub wk: &'a [f64],
    pub phi: &'a [f64],
    /// Firm count density `N(X)`.
    pub n_x: f64,
    /// Average capital per firm `K_X`.
    pub k_x: f64,
    /// Invested capital per firm `K̂_X / N(X)`.
    pub alloc_per_firm: f64,
}

/// `∫ F̄2(R(K, X)) φ(K) dK`.
pub fn f2_norm(spec: &ModelSpec, sl: &SectorSlice) -> f64 {
    sl.k_nodes
        .iter()
        .zip(sl.wk)
        .zip(sl.phi)
        .map(|((k, w), p)| w * p * f2_bar(spec, spec.functions.big_r.eval(*k, sl.x)))
        .sum()
}

/// Total return normalizer `∫∫ R(K, X) ‖Ψ(K, X)‖² dK dX`.
pub fn r_norm(spec: &ModelSpec, grid: &SectorGrid, psi2_kx: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for (j, (&x, wx)) in grid.x().iter().zip(grid.wx()).enumerate() {
        let mut inner = 0.0;
        for (m, (&k, wk)) in grid.k().iter().zip(grid.wk()).enumerate() {
            inner += wk * psi2_kx[j][m] * spec.functions.big_r.eval(k, x);
        }
        s += wx * inner;
    }
    s
}

/// Short-term return density `f` of one sector.
pub fn f_sector(spec: &ModelSpec, sl: &SectorSlice, r_total: f64) -> Result<f64> {
    if r_total <= 0.0 || !r_total.is_finite() {
        return Err(Error::ZeroDenominator(format!("total return normalizer {r_total}")));
    }
    let den = f2_norm(spec, sl);
    if den <= 0.0 || !den.is_finite() {
        return Err(Error::ZeroDenominator(format!(
            "attractiveness normalizer at X = {}",
            sl.x
        )));
    }
    let fs = &spec.functions;
    let mut acc = 0.0;
    for ((&k, w), p) in sl.k_nodes.iter().zip(sl.wk).zip(sl.phi) {
        if *p == 0.0 {
            continue;
        }
        let big_r = fs.big_r.eval(k, sl.x);
        let share = f2_bar(spec, big_r) / den;
        let gap = share * sl.alloc_per_firm / k - 1.0;
        let ret = fs.r.eval(k, sl.x) - spec.gamma * sl.k_x * sl.n_x / k + fs.f1_with_gamma(big_r / r_total, gap);
        acc += w * p * share * ret;
    }
    Ok(acc / spec.epsilon)
}

/// Sector drift `g` of one sector.
pub fn g_sector(spec: &ModelSpec, sl: &SectorSlice, r_total: f64) -> Result<f64> {
    if r_total <= 0.0 || !r_total.is_finite() {
        return Err(Error::ZeroDenominator(format!("total return normalizer {r_total}")));
    }
    let fs = &spec.functions;
    let (mut num, mut mass) = (0.0, 0.0);
    for ((&k, w), p) in sl.k_nodes.iter().zip(sl.wk).zip(sl.phi) {
        let rj = fs.big_r.jet(k, sl.x);
        let term = fs.f0.jet(rj.v).d1 * rj.dx + spec.nu * fs.f1.jet(rj.v / r_total).d1 * rj.dx / r_total;
        num += w * p * term;
        mass += w * p;
    }
    if mass <= 0.0 {
        return Err(Error::ZeroDenominator(format!("empty sector at X = {}", sl.x)));
    }
    Ok(num / mass)
}

/// Attractiveness normalizer `∫ F̄2 ‖Ψ(K′, X)‖² dK′` at node `j`.
fn node_denominator(spec: &ModelSpec, bg: &BackgroundState, j: usize) -> f64 {
    let grid = &bg.grid;
    let x = grid.x()[j];
    grid.k()
        .iter()
        .zip(grid.wk())
        .zip(&bg.psi2_kx[j])
        .map(|((k, w), p)| w * p * f2_bar(spec, spec.functions.big_r.eval(*k, x)))
        .sum()
}

fn check_x(bg: &BackgroundState, x: f64) -> Result<(usize, f64)> {
    if !bg.grid.contains_x(x) {
        return Err(Error::OutOfRange(format!("sector {x} outside grid")));
    }
    Ok(bracket(bg.grid.x(), x))
}

/// Relative attractiveness `F̂2(s, R(K, X))`.
pub fn eval_f2hat(spec: &ModelSpec, bg: &BackgroundState, at: &FirmCoord) -> Result<f64> {
    let (j, w) = check_x(bg, at.x)?;
    let den = interpolate(j, w, |i| node_denominator(spec, bg, i));
    if !(den > 0.0) {
        return Err(Error::ZeroDenominator(format!("firm density vanishes at X = {}", at.x)));
    }
    let big_r = spec.functions.big_r.eval(at.k, at.x);
    Ok(spec.functions.f2.eval(at.s, big_r) / den)
}

/// Capital allocated by investors to a firm, `F̂2(s, R(K, X)) · K̂_X`.
pub fn allocated_capital(spec: &ModelSpec, bg: &BackgroundState, at: &FirmCoord) -> Result<f64> {
    let (j, w) = check_x(bg, at.x)?;
    let khat = interpolate(j, w, |i| bg.khat_x[i]);
    Ok(eval_f2hat(spec, bg, at)? * khat)
}

/// `K̂_X / ∫ F̄2 ‖Ψ(K′, X)‖² dK′`, so that `A(K, X) = F2(s, R(K, X))` times this.
pub fn allocation_scale(spec: &ModelSpec, bg: &BackgroundState, x: f64) -> Result<f64> {
    let (j, w) = check_x(bg, x)?;
    let den = interpolate(j, w, |i| node_denominator(spec, bg, i));
    if !(den > 0.0) {
        return Err(Error::ZeroDenominator(format!("firm density vanishes at X = {x}")));
    }
    Ok(interpolate(j, w, |i| bg.khat_x[i]) / den)
}

/// Capitalization gap `Γ = F̂2 · K̂_X / K − 1`.
pub fn eval_gamma(spec: &ModelSpec, bg: &BackgroundState, at: &FirmCoord) -> Result<f64> {
    Ok(allocated_capital(spec, bg, at)? / at.k - 1.0)
}

/// Capital-adjustment drift `u = (K − F̂2 · K̂_X)/ε`.
pub fn eval_u(spec: &ModelSpec, bg: &BackgroundState, at: &FirmCoord) -> Result<f64> {
    Ok((at.k - allocated_capital(spec, bg, at)?) / spec.epsilon)
}

fn node_slice<'a>(bg: &'a BackgroundState, j: usize, phi: &'a [f64]) -> SectorSlice<'a> {
    let n = bg.psi2_x[j];
    SectorSlice {
        x: bg.grid.x()[j],
        k_nodes: bg.grid.k(),
        wk: bg.grid.wk(),
        phi,
        n_x: n,
        k_x: bg.k_x[j],
        alloc_per_firm: bg.khat_x[j] / n,
    }
}

fn node_scalar(
    spec: &ModelSpec,
    bg: &BackgroundState,
    x: f64,
    eval: impl Fn(&SectorSlice, f64) -> Result<f64>,
) -> Result<f64> {
    let (j, w) = check_x(bg, x)?;
    let r_total = r_norm(spec, &bg.grid, &bg.psi2_kx);
    let at = |i: usize| -> Result<f64> {
        let n = bg.psi2_x[i];
        if !(n > 0.0) {
            return Err(Error::ZeroDenominator(format!(
                "empty sector at X = {}",
                bg.grid.x()[i]
            )));
        }
        let phi: Vec<f64> = bg.psi2_kx[i].iter().map(|p| p / n).collect();
        eval(&node_slice(bg, i, &phi), r_total)
    };
    if w == 0.0 {
        return at(j);
    }
    if w == 1.0 {
        return at(j + 1);
    }
    Ok((1.0 - w) * at(j)? + w * at(j + 1)?)
}

/// Investor short-term return density `f(X̂)`.
pub fn eval_f(spec: &ModelSpec, bg: &BackgroundState, xhat: f64) -> Result<f64> {
    node_scalar(spec, bg, xhat, |sl, r| f_sector(spec, sl, r))
}

/// Investor sector drift `g(X̂)`.
pub fn eval_g(spec: &ModelSpec, bg: &BackgroundState, xhat: f64) -> Result<f64> {
    node_scalar(spec, bg, xhat, |sl, r| g_sector(spec, sl, r))
}

fn interpolate(j: usize, w: f64, f: impl Fn(usize) -> f64) -> f64 {
    if w == 0.0 {
        f(j)
    } else if w == 1.0 {
        f(j + 1)
    } else {
        (1.0 - w) * f(j) + w * f(j + 1)
    }
}
