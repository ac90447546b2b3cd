//! Euler–Maruyama simulation of the firm and investor microdynamics in the
//! solved background.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::background::BackgroundState;
use crate::error::{Error, Result};
use crate::model::{allocation_scale, r_norm, AxisSpec, FirmCoord, InvestorCoord, ModelSpec};
use crate::numerics::{gradient, interp, trapezoid_weights};

/// Investor streams start at this offset so they never collide with firm streams.
const INVESTOR_STREAM: u64 = 1 << 40;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSetup {
    /// Number of firm paths.
    pub n_paths: usize,
    #[serde(default)]
    pub n_investor_paths: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    #[serde(default = "default_k_min")]
    pub k_min: f64,
    /// Common starting point of every firm path; drawn from the background
    /// densities when absent.
    #[serde(default)]
    pub firm_start: Option<FirmCoord>,
    #[serde(default)]
    pub investor_start: Option<InvestorCoord>,
    /// Histogram bins over `(X, K)`; the background grid ranges with 24 bins by default.
    #[serde(default)]
    pub firm_bins: Option<(AxisSpec, AxisSpec)>,
    #[serde(default)]
    pub investor_bins: Option<(AxisSpec, AxisSpec)>,
}

fn default_k_min() -> f64 {
    1e-6
}

impl McSetup {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.horizon >= self.dt) {
            return Err(Error::InvalidSpec("Monte Carlo needs 0 < dt ≤ horizon".into()));
        }
        if self.n_paths == 0 || !(self.k_min > 0.0) {
            return Err(Error::InvalidSpec(
                "Monte Carlo needs paths and a positive k_min".into(),
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Counts over `[min, max)` bins; `a` is the sector axis, `b` the capital axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram2d {
    pub a: AxisSpec,
    pub b: AxisSpec,
    pub counts: Vec<u64>,
    pub outside: u64,
}

impl Histogram2d {
    fn new(a: AxisSpec, b: AxisSpec) -> Self {
        Histogram2d {
            a,
            b,
            counts: vec![0; a.n * b.n],
            outside: 0,
        }
    }

    fn bin(ax: &AxisSpec, v: f64) -> Option<usize> {
        let t = (v - ax.min) / (ax.max - ax.min);
        if (0.0..1.0).contains(&t) {
            Some(((t * ax.n as f64) as usize).min(ax.n - 1))
        } else {
            None
        }
    }

    fn add(&mut self, a: f64, b: f64) {
        match (Self::bin(&self.a, a), Self::bin(&self.b, b)) {
            (Some(i), Some(j)) => self.counts[i * self.b.n + j] += 1,
            _ => self.outside += 1,
        }
    }

    pub fn centers(ax: &AxisSpec) -> Vec<f64> {
        let w = (ax.max - ax.min) / ax.n as f64;
        (0..ax.n).map(|i| ax.min + (i as f64 + 0.5) * w).collect()
    }

    /// Counts divided by the total sample count and the bin area.
    pub fn density(&self) -> Vec<f64> {
        let total = self.counts.iter().sum::<u64>() + self.outside;
        let area = (self.a.max - self.a.min) / self.a.n as f64 * (self.b.max - self.b.min) / self.b.n as f64;
        self.counts
            .iter()
            .map(|c| *c as f64 / (total.max(1) as f64 * area))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McResult {
    /// `(X, K)` of every firm path at the start and at the horizon.
    pub firm_initial: Vec<(f64, f64)>,
    pub firm_final: Vec<(f64, f64)>,
    pub investor_initial: Vec<(f64, f64)>,
    pub investor_final: Vec<(f64, f64)>,
    pub firm_hist: Histogram2d,
    pub investor_hist: Histogram2d,
    pub reflections: usize,
    /// `|Σ K − Σ A(K, X)| / Σ K` after every step.
    pub capital_gap: Vec<f64>,
}

impl McResult {
    /// Mean sector displacement of firms and its standard error.
    pub fn firm_displacement(&self) -> (f64, f64) {
        mean_and_se(self.firm_initial.iter().zip(&self.firm_final).map(|(a, b)| b.0 - a.0))
    }
}

pub(crate) fn mean_and_se(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

/// Background quantities tabulated on the sector nodes.
struct Field<'a> {
    spec: &'a ModelSpec,
    bg: &'a BackgroundState,
    khat: Vec<f64>,
    den: Vec<f64>,
    grad_psi2: Vec<f64>,
    r_total: f64,
    x_range: (f64, f64),
}

impl<'a> Field<'a> {
    fn new(spec: &'a ModelSpec, bg: &'a BackgroundState) -> Result<Self> {
        let x = bg.grid.x();
        let mut den = Vec::with_capacity(x.len());
        for (xi, kh) in x.iter().zip(&bg.khat_x) {
            den.push(kh / allocation_scale(spec, bg, *xi)?);
        }
        Ok(Field {
            spec,
            bg,
            khat: bg.khat_x.clone(),
            den,
            grad_psi2: gradient(x, &bg.psi2_x),
            r_total: r_norm(spec, &bg.grid, &bg.psi2_kx),
            x_range: bg.grid.x_range(),
        })
    }

    fn clamp(&self, x: f64) -> f64 {
        x.clamp(self.x_range.0, self.x_range.1)
    }

    fn at(&self, values: &[f64], x: f64) -> f64 {
        interp(self.bg.grid.x(), values, self.clamp(x))
    }

    fn allocated(&self, k: f64, x: f64, s: f64) -> f64 {
        let fs = &self.spec.functions;
        fs.f2.eval(s, fs.big_r.eval(k, x)) * self.at(&self.khat, x) / self.at(&self.den, x)
    }

    fn firm_drift(&self, k: f64, x: f64, s: f64) -> (f64, f64) {
        let spec = self.spec;
        let fs = &spec.functions;
        let tau = if spec.tau_capital_dependent {
            spec.tau * self.at(&self.bg.k_x, x) / k
        } else {
            spec.tau
        };
        let dx = fs.big_r.jet(k, x).dx * fs.h.eval(k) - tau * self.at(&self.grad_psi2, x);
        let u = (k - self.allocated(k, x, s)) / spec.epsilon;
        (dx, -u)
    }

    /// Firm-level short-term return and sector drift used by investors.
    fn firm_returns(&self, k: f64, x: f64) -> (f64, f64) {
        let spec = self.spec;
        let fs = &spec.functions;
        let rj = fs.big_r.jet(k, x);
        let v = rj.v / self.r_total;
        let n = self.at(&self.bg.psi2_x, x);
        let kx = self.at(&self.bg.k_x, x);
        let f = (fs.r.eval(k, x) - spec.gamma * kx * n / k + fs.f1.eval(v)) / spec.epsilon;
        let g = fs.f0.jet(rj.v).d1 * rj.dx + spec.nu * fs.f1.jet(v).d1 * rj.dx / self.r_total;
        (f, g)
    }
}

fn path_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Index drawn proportionally to `weights`, then a uniform offset inside the
/// neighbouring half cells.
fn draw_from(nodes: &[f64], density: &[f64], rng: &mut ChaCha8Rng) -> Option<f64> {
    let w = trapezoid_weights(nodes);
    let mass: Vec<f64> = w.iter().zip(density).map(|(a, b)| a * b.max(0.0)).collect();
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) {
        return None;
    }
    let mut target = rng.gen::<f64>() * total;
    let mut idx = mass.len() - 1;
    for (i, m) in mass.iter().enumerate() {
        if target < *m {
            idx = i;
            break;
        }
        target -= m;
    }
    let lo = if idx == 0 {
        nodes[0]
    } else {
        0.5 * (nodes[idx - 1] + nodes[idx])
    };
    let hi = if idx + 1 == nodes.len() {
        nodes[idx]
    } else {
        0.5 * (nodes[idx] + nodes[idx + 1])
    };
    Some(lo + rng.gen::<f64>() * (hi - lo))
}

fn draw_firm(bg: &BackgroundState, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let grid = &bg.grid;
    let x =
        draw_from(grid.x(), &bg.psi2_x, rng).ok_or_else(|| Error::ZeroDenominator("no firms to draw from".into()))?;
    let j = nearest(grid.x(), x);
    let k = draw_from(grid.k(), &bg.psi2_kx[j], rng)
        .ok_or_else(|| Error::ZeroDenominator("empty capital profile".into()))?;
    Ok((x, k))
}

fn draw_investor(bg: &BackgroundState, rng: &mut ChaCha8Rng) -> Result<(f64, f64)> {
    let grid = &bg.grid;
    let x = draw_from(grid.x(), &bg.nhat_x, rng)
        .ok_or_else(|| Error::ZeroDenominator("no investors to draw from".into()))?;
    let j = nearest(grid.x(), x);
    let k = draw_from(grid.khat(), &bg.psihat2[j], rng)
        .ok_or_else(|| Error::ZeroDenominator("empty investor profile".into()))?;
    Ok((x, k))
}

fn nearest(nodes: &[f64], x: f64) -> usize {
    (0..nodes.len())
        .min_by(|a, b| (nodes[*a] - x).abs().total_cmp(&(nodes[*b] - x).abs()))
        .unwrap_or(0)
}

fn reflect(k: f64, floor: f64, count: &mut usize) -> f64 {
    if k < floor {
        *count += 1;
        (2.0 * floor - k).max(floor)
    } else {
        k
    }
}

/// Runs the ensemble. Investor drifts average firm returns over firms within
/// one sector cell; without such firms they fall back to the background `f`, `g`.
pub fn mc_simulate(setup: &McSetup, spec: &ModelSpec, bg: &BackgroundState) -> Result<McResult> {
    setup.validate()?;
    let field = Field::new(spec, bg)?;
    let grid = &bg.grid;
    let dt = setup.dt;
    let sqdt = dt.sqrt();
    let (sx, sk) = (spec.sigma_x2.sqrt(), spec.sigma_k2.sqrt());
    let (sxh, skh) = (spec.sigma_xhat2.sqrt(), spec.sigma_khat2.sqrt());
    let bandwidth = grid.x_spacing().max;
    let s = setup.firm_start.map(|c| c.s).unwrap_or(spec.s_values[0]);

    let mut firm_rng: Vec<ChaCha8Rng> = (0..setup.n_paths as u64).map(|i| path_rng(setup.seed, i)).collect();
    let mut inv_rng: Vec<ChaCha8Rng> = (0..setup.n_investor_paths as u64)
        .map(|i| path_rng(setup.seed, INVESTOR_STREAM + i))
        .collect();

    let mut firms = Vec::with_capacity(setup.n_paths);
    for rng in firm_rng.iter_mut() {
        firms.push(match setup.firm_start {
            Some(c) => (c.x, c.k),
            None => draw_firm(bg, rng)?,
        });
    }
    let mut investors = Vec::with_capacity(setup.n_investor_paths);
    for rng in inv_rng.iter_mut() {
        investors.push(match setup.investor_start {
            Some(c) => (c.xhat, c.khat),
            None => draw_investor(bg, rng)?,
        });
    }
    let firm_initial = firms.clone();
    let investor_initial = investors.clone();
    let mut reflections = 0;
    let mut capital_gap = Vec::with_capacity(setup.steps());

    for _ in 0..setup.steps() {
        let returns: Vec<(f64, f64, f64)> = if investors.is_empty() {
            Vec::new()
        } else {
            let mut r: Vec<(f64, f64, f64)> = firms
                .iter()
                .map(|&(x, k)| {
                    let (f, g) = field.firm_returns(k, x);
                    (x, f, g)
                })
                .collect();
            r.sort_by(|a, b| a.0.total_cmp(&b.0));
            r
        };
        for (rng, (x, k)) in firm_rng.iter_mut().zip(firms.iter_mut()) {
            let (vx, vk) = field.firm_drift(*k, *x, s);
            let (zx, zk): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            *x += vx * dt + sx * sqdt * zx;
            *k = reflect(*k + vk * dt + sk * sqdt * zk, setup.k_min, &mut reflections);
        }
        for (rng, (x, k)) in inv_rng.iter_mut().zip(investors.iter_mut()) {
            let lo = returns.partition_point(|r| r.0 < *x - 0.5 * bandwidth);
            let hi = returns.partition_point(|r| r.0 <= *x + 0.5 * bandwidth);
            let (f, g) = if hi > lo {
                let n = (hi - lo) as f64;
                let (sf, sg) = returns[lo..hi].iter().fold((0.0, 0.0), |(a, b), r| (a + r.1, b + r.2));
                (sf / n, sg / n)
            } else {
                (field.at(&bg.f_x, *x), field.at(&bg.g_x, *x))
            };
            let (zx, zk): (f64, f64) = (rng.sample(StandardNormal), rng.sample(StandardNormal));
            *x += g * dt + sxh * sqdt * zx;
            *k = reflect(*k + *k * f * dt + skh * sqdt * zk, setup.k_min, &mut reflections);
        }
        let (total, alloc) = firms
            .iter()
            .fold((0.0, 0.0), |(t, a), &(x, k)| (t + k, a + field.allocated(k, x, s)));
        capital_gap.push((total - alloc).abs() / total);
    }

    let default_bins = |b: (f64, f64)| AxisSpec {
        min: b.0,
        max: b.1,
        n: 24,
    };
    let (fa, fb) = setup
        .firm_bins
        .unwrap_or((default_bins(grid.x_range()), default_bins(grid.k_range())));
    let (ia, ib) = setup
        .investor_bins
        .unwrap_or((default_bins(grid.x_range()), default_bins(grid.khat_range())));
    let mut firm_hist = Histogram2d::new(fa, fb);
    for &(x, k) in &firms {
        firm_hist.add(x, k);
    }
    let mut investor_hist = Histogram2d::new(ia, ib);
    for &(x, k) in &investors {
        investor_hist.add(x, k);
    }
    Ok(McResult {
        firm_initial,
        firm_final: firms,
        investor_initial,
        investor_final: investors,
        firm_hist,
        investor_hist,
        reflections,
        capital_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::testutil::{sloped_spec, solve};

    fn setup(n: usize, seed: u64) -> McSetup {
        McSetup {
            n_paths: n,
            n_investor_paths: 200,
            dt: 0.01,
            horizon: 1.0,
            seed,
            k_min: 1e-6,
            firm_start: None,
            investor_start: None,
            firm_bins: None,
            investor_bins: None,
        }
    }

    #[test]
    fn pure_diffusion_variance() {
        let spec = sloped_spec(0.0);
        let bg = solve(&spec);
        let mut s = setup(4000, 7);
        s.firm_start = Some(FirmCoord::new(1.0, 0.0, 1.0));
        let r = mc_simulate(&s, &spec, &bg).unwrap();
        let d: Vec<f64> = r
            .firm_initial
            .iter()
            .zip(&r.firm_final)
            .map(|(a, b)| b.0 - a.0)
            .collect();
        let n = d.len() as f64;
        let mean = d.iter().sum::<f64>() / n;
        let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // Standard error of the sample variance for Gaussian increments.
        let se = spec.sigma_x2 * (2.0 / (n - 1.0)).sqrt();
        assert!((var - spec.sigma_x2).abs() < 3.0 * se, "{var}");
    }

    #[test]
    fn same_seed_same_histograms() {
        let spec = sloped_spec(0.3);
        let bg = solve(&spec);
        let a = mc_simulate(&setup(500, 11), &spec, &bg).unwrap();
        let b = mc_simulate(&setup(500, 11), &spec, &bg).unwrap();
        let c = mc_simulate(&setup(500, 12), &spec, &bg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.firm_hist, c.firm_hist);
    }
}
