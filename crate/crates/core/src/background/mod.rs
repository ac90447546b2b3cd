//! Collective state: firm and investor densities and the self-consistent
//! average capital per sector.

mod io;

pub use io::{read_state, write_bundle};

use log::{debug, info};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{f_sector, g_sector, r_norm, ModelSpec, SectorGrid, SectorSlice};
use crate::numerics::{gradient, gradient_self_weights};
use crate::specfun::pcf;

/// Solved collective state. Sector arrays live on `grid.x()`; `psi2_kx[j]` is on
/// `grid.k()` and `psihat2[j]` on `grid.khat()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackgroundState {
    pub grid: SectorGrid,
    /// Firm density per sector `‖Ψ(X)‖²`.
    pub psi2_x: Vec<f64>,
    /// Firm density over capital and sector `‖Ψ(K, X)‖²`.
    pub psi2_kx: Vec<Vec<f64>>,
    /// Investor density `‖Ψ̂(K̂, X̂)‖²`.
    pub psihat2: Vec<Vec<f64>>,
    /// Average capital per firm.
    pub k_x: Vec<f64>,
    /// Total invested capital per sector.
    pub khat_x: Vec<f64>,
    pub n_x: Vec<f64>,
    pub nhat_x: Vec<f64>,
    /// `∫ K̂² ‖Ψ̂(K̂, X̂)‖² dK̂`.
    pub khat_second_moment: Vec<f64>,
    pub d_const: f64,
    pub f_x: Vec<f64>,
    pub g_x: Vec<f64>,
    pub big_f_x: Vec<f64>,
    pub f_prime_x: Vec<f64>,
    pub grad_g_x: Vec<f64>,
    pub p_x: Vec<f64>,
    pub m_param: f64,
    pub a_x: Vec<f64>,
    pub c_norm: Vec<f64>,
    pub v: f64,
    pub v0: f64,
    pub residual: f64,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
}

impl BackgroundState {
    /// Whether sector node `j` carries firms.
    pub fn active(&self, j: usize) -> bool {
        self.psi2_x[j] > 0.0
    }
}

/// Damped fixed-point controls.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverOptions {
    #[serde(default = "default_damping")]
    pub damping: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_damping() -> f64 {
    0.3
}
fn default_tol() -> f64 {
    1e-8
}
fn default_max_iter() -> usize {
    10_000
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            damping: default_damping(),
            tol: default_tol(),
            max_iter: default_max_iter(),
        }
    }
}

/// Normalized Gaussian capital profile whose discrete trapezoid mean is `k_x`.
pub fn capital_profile(k_nodes: &[f64], wk: &[f64], k_x: f64, spread: f64) -> Result<Vec<f64>> {
    let (lo, hi) = (k_nodes[0], k_nodes[k_nodes.len() - 1]);
    if !(k_x > lo && k_x < hi) {
        return Err(Error::OutOfRange(format!(
            "average capital {k_x} outside the open capital range ({lo}, {hi})"
        )));
    }
    let w2 = spread * spread;
    let moments = |mu: f64| -> (Vec<f64>, f64, f64) {
        let logs: Vec<f64> = k_nodes.iter().map(|k| -(k - mu).powi(2) / (2.0 * w2)).collect();
        let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut phi: Vec<f64> = logs.iter().map(|l| (l - top).exp()).collect();
        let mass: f64 = phi.iter().zip(wk).map(|(p, w)| p * w).sum();
        phi.iter_mut().for_each(|p| *p /= mass);
        let mean: f64 = phi.iter().zip(wk).zip(k_nodes).map(|((p, w), k)| p * w * k).sum();
        let var: f64 = phi
            .iter()
            .zip(wk)
            .zip(k_nodes)
            .map(|((p, w), k)| p * w * (k - mean).powi(2))
            .sum();
        (phi, mean, var)
    };
    // The discrete mean is increasing in μ; Newton steps safeguarded by a bracket.
    let (mut a, mut b) = (lo - 20.0 * spread, hi + 20.0 * spread);
    let mut mu = k_x;
    for _ in 0..200 {
        let (phi, mean, var) = moments(mu);
        let err = mean - k_x;
        if err.abs() <= 4.0 * f64::EPSILON * k_x.abs() {
            return Ok(phi);
        }
        if err > 0.0 {
            b = mu;
        } else {
            a = mu;
        }
        let step = err * w2 / var.max(1e-300);
        let next = mu - step;
        mu = if next > a && next < b { next } else { 0.5 * (a + b) };
        if b - a <= 4.0 * f64::EPSILON * mu.abs().max(1.0) {
            return Ok(moments(mu).0);
        }
    }
    Ok(moments(mu).0)
}

/// Firm density per sector, clipped at zero.
pub fn firm_density(spec: &ModelSpec, grid: &SectorGrid, k_x: &[f64], d_const: f64) -> Result<Vec<f64>> {
    if !(spec.tau > 0.0) {
        return Err(Error::NonPositiveTau);
    }
    Ok(grid
        .x()
        .iter()
        .zip(k_x)
        .map(|(&x, &k)| firm_density_at(spec, x, k, d_const))
        .collect())
}

fn firm_density_at(spec: &ModelSpec, x: f64, k: f64, d_const: f64) -> f64 {
    let fs = &spec.functions;
    let r = fs.big_r.jet(k, x);
    let h = fs.h.jet(k);
    let bracket = r.dx * r.dx + spec.sigma_x2 * r.dxx / h.v;
    let v = d_const / (2.0 * spec.tau) - bracket * (1.0 - h.d1 * k / h.v) * h.v * h.v / (4.0 * spec.tau);
    v.max(0.0)
}

/// Total sector volume `V` and the volume `V0` where the firm density vanishes.
pub fn sector_volumes(grid: &SectorGrid, psi2_x: &[f64]) -> (f64, f64) {
    let v0 = grid
        .wx()
        .iter()
        .zip(psi2_x)
        .filter(|(_, p)| **p <= 0.0)
        .map(|(w, _)| w)
        .sum();
    (grid.volume(), v0)
}

/// `D ≃ 2τN/(V−V0) + (1/2σ_X²)⟨(∇_X R)²⟩ H²(1 − H′⟨K̂⟩/(H N))`, with the
/// average taken over the support and `H` evaluated at `⟨K̂⟩/N`.
pub fn compute_d_const(
    spec: &ModelSpec,
    grid: &SectorGrid,
    k_x: &[f64],
    khat_x: &[f64],
    psi2_x: &[f64],
) -> Result<f64> {
    let (v, v0) = sector_volumes(grid, psi2_x);
    if v <= v0 {
        return Err(Error::DegenerateVolume { v, v0 });
    }
    let support = v - v0;
    let mut grad2 = 0.0;
    for (j, (&x, w)) in grid.x().iter().zip(grid.wx()).enumerate() {
        if psi2_x[j] > 0.0 {
            let dx = spec.functions.big_r.jet(k_x[j], x).dx;
            grad2 += w * dx * dx;
        }
    }
    grad2 /= support;
    let khat_total: f64 = grid.wx().iter().zip(khat_x).map(|(w, k)| w * k).sum();
    let n = spec.n_firms;
    let h = spec.functions.h.jet(khat_total / n);
    let mobility = h.v * h.v * (1.0 - h.d1 * khat_total / (h.v * n));
    Ok(2.0 * spec.tau * n / support + grad2 * mobility / (2.0 * spec.sigma_x2))
}

/// Inputs of the investor density for each sector.
#[derive(Debug, Clone)]
pub struct InvestorInputs<'a> {
    pub f_x: &'a [f64],
    pub f_prime_x: &'a [f64],
    pub big_f_x: &'a [f64],
    pub p_x: &'a [f64],
    pub nhat_x: &'a [f64],
    pub active: &'a [bool],
}

/// Investor density on `(X̂, K̂)` normalized to `N̂(X̂)` per sector, with the
/// normalization constants.
pub fn investor_density(
    spec: &ModelSpec,
    grid: &SectorGrid,
    inp: &InvestorInputs,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let nk = grid.nkhat();
    let mut dens = Vec::with_capacity(grid.nx());
    let mut consts = Vec::with_capacity(grid.nx());
    let sk2 = spec.sigma_khat2;
    for (j, &x) in grid.x().iter().enumerate() {
        if !inp.active[j] {
            dens.push(vec![0.0; nk]);
            consts.push(0.0);
            continue;
        }
        let f = inp.f_x[j];
        if f == 0.0 || !f.is_finite() {
            return Err(Error::ZeroF { x });
        }
        let a = f.abs();
        let shift = sk2 * inp.big_f_x[j] / (f * f);
        let scale = (a / sk2).sqrt();
        let quartic = spec.sigma_x2 * inp.f_prime_x[j].powi(2) / (96.0 * sk2 * a);
        let mut row = Vec::with_capacity(nk);
        for &kh in grid.khat() {
            let z = scale * (kh + shift);
            let value = if z > crate::specfun::Z_MAX {
                0.0
            } else {
                let d = pcf(inp.p_x[j], z)?;
                (-quartic * kh.powi(4)).exp() * d * d
            };
            row.push(value);
        }
        let mass: f64 = row.iter().zip(grid.wkhat()).map(|(v, w)| v * w).sum();
        if !(mass > 0.0) {
            return Err(Error::ZeroDenominator(format!("investor density vanishes at X̂ = {x}")));
        }
        let c = inp.nhat_x[j] / mass;
        row.iter_mut().for_each(|v| *v *= c);
        dens.push(row);
        consts.push(c);
    }
    Ok((dens, consts))
}

/// Everything derived from one `(K_X, D)` iterate.
struct Sweep {
    psi2_x: Vec<f64>,
    psi2_kx: Vec<Vec<f64>>,
    psihat2: Vec<Vec<f64>>,
    khat_x: Vec<f64>,
    nhat_x: Vec<f64>,
    khat_second_moment: Vec<f64>,
    f_x: Vec<f64>,
    g_x: Vec<f64>,
    big_f_x: Vec<f64>,
    f_prime_x: Vec<f64>,
    grad_g_x: Vec<f64>,
    p_x: Vec<f64>,
    c_norm: Vec<f64>,
    v: f64,
    v0: f64,
}

/// Investor-side quantities carried over from the previous iterate.
struct Carry {
    khat_x: Vec<f64>,
    m2: Vec<f64>,
}

struct Context<'a> {
    spec: &'a ModelSpec,
    grid: &'a SectorGrid,
    nhat: Vec<f64>,
    a_x: Vec<f64>,
}

impl Context<'_> {
    fn profile(&self, k_x: f64) -> Result<Vec<f64>> {
        capital_profile(self.grid.k(), self.grid.wk(), k_x, self.spec.firm_capital_spread)
    }

    /// `f` and `g` at node `j` for a trial average capital, holding the return
    /// normalizer and the invested capital fixed.
    fn local_fg(&self, j: usize, k_x: f64, d: f64, khat: f64, r_total: f64) -> Result<(f64, f64)> {
        let phi = self.profile(k_x)?;
        let x = self.grid.x()[j];
        let n = firm_density_at(self.spec, x, k_x, d);
        let sl = SectorSlice {
            x,
            k_nodes: self.grid.k(),
            wk: self.grid.wk(),
            phi: &phi,
            n_x: n,
            k_x,
            alloc_per_firm: if n > 0.0 { khat / n } else { k_x },
        };
        Ok((f_sector(self.spec, &sl, r_total)?, g_sector(self.spec, &sl, r_total)?))
    }

    fn sweep(&self, k_x: &[f64], d: f64, carry: &Carry) -> Result<Sweep> {
        let spec = self.spec;
        let grid = self.grid;
        let nx = grid.nx();
        let psi2_x = firm_density(spec, grid, k_x, d)?;
        let (v, v0) = sector_volumes(grid, &psi2_x);
        if v <= v0 {
            return Err(Error::DegenerateVolume { v, v0 });
        }
        let active: Vec<bool> = psi2_x.iter().map(|p| *p > 0.0).collect();
        let profiles = k_x.iter().map(|k| self.profile(*k)).collect::<Result<Vec<_>>>()?;
        let psi2_kx: Vec<Vec<f64>> = profiles
            .iter()
            .zip(&psi2_x)
            .map(|(phi, n)| phi.iter().map(|p| p * n).collect())
            .collect();
        let r_total = r_norm(spec, grid, &psi2_kx);

        let mut f_x = vec![0.0; nx];
        let mut g_x = vec![0.0; nx];
        for j in 0..nx {
            let n = psi2_x[j];
            let sl = SectorSlice {
                x: grid.x()[j],
                k_nodes: grid.k(),
                wk: grid.wk(),
                phi: &profiles[j],
                n_x: n,
                k_x: k_x[j],
                alloc_per_firm: if n > 0.0 { carry.khat_x[j] / n } else { k_x[j] },
            };
            f_x[j] = f_sector(spec, &sl, r_total)?;
            g_x[j] = g_sector(spec, &sl, r_total)?;
        }
        let f_prime_x = gradient(grid.x(), &f_x);
        let grad_g_x = gradient(grid.x(), &g_x);

        let mut big_f_x = vec![0.0; nx];
        if !spec.neglect_kx_derivatives {
            let self_w = gradient_self_weights(grid.x());
            let (lo, hi) = grid.k_range();
            for j in (0..nx).filter(|&j| active[j]) {
                let h = 1e-5 * k_x[j].abs().max(1e-3);
                let kp = (k_x[j] + h).min(hi - 1e-9 * (hi - lo));
                let km = (k_x[j] - h).max(lo + 1e-9 * (hi - lo));
                let (fp, gp) = self.local_fg(j, kp, d, carry.khat_x[j], r_total)?;
                let (fm, gm) = self.local_fg(j, km, d, carry.khat_x[j], r_total)?;
                let df = (fp - fm) / (kp - km);
                let dg = (gp - gm) / (kp - km);
                let dh = g_x[j] * dg / spec.sigma_xhat2 + 0.5 * self_w[j] * dg + df;
                let n = psi2_x[j];
                big_f_x[j] = dh * self.nhat[j] / n + 2.0 * f_x[j] * df * carry.m2[j] / (spec.sigma_khat2 * n);
            }
        }

        let p_x: Vec<f64> = (0..nx)
            .map(|j| {
                if active[j] {
                    (spec.m_param - self.a_x[j]) / f_x[j].abs()
                } else {
                    0.0
                }
            })
            .collect();
        let nhat_x: Vec<f64> = (0..nx).map(|j| if active[j] { self.nhat[j] } else { 0.0 }).collect();
        let (psihat2, c_norm) = investor_density(
            spec,
            grid,
            &InvestorInputs {
                f_x: &f_x,
                f_prime_x: &f_prime_x,
                big_f_x: &big_f_x,
                p_x: &p_x,
                nhat_x: &nhat_x,
                active: &active,
            },
        )?;
        let moment = |row: &[f64], pow: i32| -> f64 {
            row.iter()
                .zip(grid.wkhat())
                .zip(grid.khat())
                .map(|((v, w), k)| v * w * k.powi(pow))
                .sum()
        };
        let khat_x: Vec<f64> = psihat2.iter().map(|row| moment(row, 1)).collect();
        let khat_second_moment: Vec<f64> = psihat2.iter().map(|row| moment(row, 2)).collect();
        Ok(Sweep {
            psi2_x,
            psi2_kx,
            psihat2,
            khat_x,
            nhat_x,
            khat_second_moment,
            f_x,
            g_x,
            big_f_x,
            f_prime_x,
            grad_g_x,
            p_x,
            c_norm,
            v,
            v0,
        })
    }
}

/// Damped fixed point of `K_X ‖Ψ(X)‖² = ∫ K̂ ‖Ψ̂(K̂, X)‖² dK̂`, iterated jointly
/// with the constant `D`.
pub fn solve_selfconsistent(
    spec: &ModelSpec,
    grid: &SectorGrid,
    init_kx: &[f64],
    opts: &SolverOptions,
) -> Result<BackgroundState> {
    spec.validate(grid)?;
    if init_kx.len() != grid.nx() {
        return Err(Error::InvalidSpec(format!(
            "initial K_X has {} entries for {} sectors",
            init_kx.len(),
            grid.nx()
        )));
    }
    if init_kx.iter().any(|k| !(k.is_finite() && *k > 0.0)) {
        return Err(Error::InvalidSpec("initial K_X must be positive".into()));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) || !(opts.tol > 0.0) {
        return Err(Error::InvalidSpec(
            "damping must lie in (0, 1] and tol be positive".into(),
        ));
    }
    if !(spec.tau > 0.0) {
        return Err(Error::NonPositiveTau);
    }
    let ctx = Context {
        spec,
        grid,
        nhat: spec.n_investors.resolve(grid.nx(), "n_investors")?,
        a_x: spec.a_x.resolve(grid.nx(), "a_x")?,
    };
    let nx = grid.nx();
    let lambda = opts.damping;

    let mut k_x = init_kx.to_vec();
    // Start from a uniform firm density over the whole sector space.
    let n_uniform = spec.n_firms / grid.volume();
    let mut khat: Vec<f64> = k_x.iter().map(|k| k * n_uniform).collect();
    let mut d = compute_d_const(spec, grid, &k_x, &khat, &vec![n_uniform; nx])?;
    let mut carry = Carry {
        khat_x: khat.clone(),
        m2: vec![0.0; nx],
    };
    let mut history = Vec::new();
    let mut converged = false;

    for it in 0..opts.max_iter {
        let sw = ctx.sweep(&k_x, d, &carry)?;
        let d_target = compute_d_const(spec, grid, &k_x, &sw.khat_x, &sw.psi2_x)?;
        let mut residual = (d_target - d).abs() / d.abs().max(1e-300);
        let mut target = k_x.clone();
        for j in 0..nx {
            if sw.psi2_x[j] > 0.0 {
                target[j] = sw.khat_x[j] / sw.psi2_x[j];
                residual = residual.max((target[j] - k_x[j]).abs() / k_x[j].abs());
            }
        }
        if !residual.is_finite() {
            return Err(Error::NonFinite(format!("fixed-point residual at iteration {it}")));
        }
        history.push(residual);
        debug!("iteration {it}: residual {residual:e}, D = {d}");
        if residual < opts.tol {
            converged = true;
            break;
        }
        for j in 0..nx {
            k_x[j] = (1.0 - lambda) * k_x[j] + lambda * target[j];
        }
        d = (1.0 - lambda) * d + lambda * d_target;
        khat = sw.khat_x;
        carry = Carry {
            khat_x: khat.clone(),
            m2: sw.khat_second_moment,
        };
    }
    let residual = history.last().copied().unwrap_or(f64::INFINITY);
    if !converged {
        return Err(Error::NoConvergence {
            iterations: history.len(),
            residual,
            history,
        });
    }
    info!(
        "background converged in {} iterations, residual {residual:e}",
        history.len()
    );
    let sw = ctx.sweep(&k_x, d, &carry)?;
    Ok(BackgroundState {
        grid: grid.clone(),
        n_x: sw.psi2_x.clone(),
        psi2_x: sw.psi2_x,
        psi2_kx: sw.psi2_kx,
        psihat2: sw.psihat2,
        k_x,
        khat_x: sw.khat_x,
        nhat_x: sw.nhat_x,
        khat_second_moment: sw.khat_second_moment,
        d_const: d,
        f_x: sw.f_x,
        g_x: sw.g_x,
        big_f_x: sw.big_f_x,
        f_prime_x: sw.f_prime_x,
        grad_g_x: sw.grad_g_x,
        p_x: sw.p_x,
        m_param: spec.m_param,
        a_x: ctx.a_x,
        c_norm: sw.c_norm,
        v: sw.v,
        v0: sw.v0,
        residual,
        iterations: history.len(),
        residual_history: history,
    })
}
