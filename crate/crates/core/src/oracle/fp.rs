//! Finite-difference evolution `−∂_t u = (−d_a ∂_a² − d_b ∂_b² + V) u` on a
//! uniform two-axis grid.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AxisSpec;
use crate::numerics::{bracket, solve_tridiagonal, trapezoid_weights};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Zero value on the boundary nodes.
    Absorbing,
    /// Zero flux through the boundary.
    #[default]
    Reflecting,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    /// Firm kernel with the potential frozen at the sector-average capital.
    Firm,
    /// Firm kernel with the full capital-dependent potential.
    FirmFull,
    /// Investor kernel in the sector and rescaled-capital variables.
    Investor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeSetup {
    pub operator: OperatorKind,
    /// Sector axis.
    pub x_axis: AxisSpec,
    /// Capital axis: `K` for firms, the rescaled variable `y` for investors.
    pub capital_axis: AxisSpec,
    pub dt: f64,
    pub horizon: f64,
    /// Store a snapshot every this many steps.
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default)]
    pub boundary: Boundary,
}

fn default_record_every() -> usize {
    1
}

impl PdeSetup {
    pub fn validate(&self) -> Result<()> {
        for (name, ax) in [("x_axis", &self.x_axis), ("capital_axis", &self.capital_axis)] {
            if ax.n < 3 || !(ax.max > ax.min) {
                return Err(Error::InvalidGrid(format!("{name} needs 3 nodes on a proper range")));
            }
        }
        if !(self.dt > 0.0) || !(self.horizon >= self.dt) || self.record_every == 0 {
            return Err(Error::InvalidSpec(
                "PDE setup needs 0 < dt ≤ horizon and record_every ≥ 1".into(),
            ));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Discretized operator; the potential is stored row-major with the sector
/// axis `a` outermost.
#[derive(Debug, Clone, PartialEq)]
pub struct Operator2d {
    pub a_nodes: Vec<f64>,
    pub b_nodes: Vec<f64>,
    pub d_a: f64,
    pub d_b: f64,
    pub potential: Vec<f64>,
    pub boundary: Boundary,
}

/// Recorded evolution.
#[derive(Debug, Clone, PartialEq)]
pub struct FpSolution {
    pub times: Vec<f64>,
    pub snapshots: Vec<Vec<f64>>,
    pub mass: Vec<f64>,
    /// Number of negative undershoots set to zero.
    pub clipped: usize,
}

impl FpSolution {
    /// Time series at flat node index `idx`.
    pub fn series(&self, idx: usize) -> Vec<f64> {
        self.snapshots.iter().map(|s| s[idx]).collect()
    }
}

/// Steps of backward-Euler splitting before switching to Peaceman–Rachford.
const STARTUP_STEPS: usize = 2;
const CLIP_FLOOR: f64 = 1e-12;

/// One-dimensional `−d ∂² + v` with the chosen boundary, as tridiagonal bands.
struct Line {
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
}

fn line_operator(n: usize, h: f64, d: f64, v: &[f64], boundary: Boundary) -> Line {
    let c = d / (h * h);
    let mut lower = vec![-c; n];
    let mut upper = vec![-c; n];
    let mut diag: Vec<f64> = v.iter().map(|p| 2.0 * c + p).collect();
    match boundary {
        Boundary::Reflecting => {
            upper[0] = -2.0 * c;
            lower[n - 1] = -2.0 * c;
        }
        Boundary::Absorbing => {
            for i in [0, n - 1] {
                lower[i] = 0.0;
                upper[i] = 0.0;
                diag[i] = 0.0;
            }
        }
    }
    Line { lower, diag, upper }
}

impl Line {
    fn apply(&self, u: &[f64], out: &mut [f64]) {
        let n = u.len();
        for i in 0..n {
            let mut s = self.diag[i] * u[i];
            if i > 0 {
                s += self.lower[i] * u[i - 1];
            }
            if i + 1 < n {
                s += self.upper[i] * u[i + 1];
            }
            out[i] = s;
        }
    }

    /// Solves `(I + θ L) x = rhs` in place.
    fn solve_shifted(&self, theta: f64, rhs: &mut [f64], absorbing: bool) {
        let n = rhs.len();
        let lower: Vec<f64> = self.lower.iter().map(|l| theta * l).collect();
        let upper: Vec<f64> = self.upper.iter().map(|u| theta * u).collect();
        let diag: Vec<f64> = self.diag.iter().map(|d| 1.0 + theta * d).collect();
        if absorbing {
            rhs[0] = 0.0;
            rhs[n - 1] = 0.0;
        }
        solve_tridiagonal(&lower, &diag, &upper, rhs);
    }
}

impl Operator2d {
    pub fn new(
        a_axis: AxisSpec,
        b_axis: AxisSpec,
        d_a: f64,
        d_b: f64,
        potential: impl Fn(f64, f64) -> f64,
        boundary: Boundary,
    ) -> Self {
        let (a_nodes, b_nodes) = (a_axis.nodes(), b_axis.nodes());
        let mut pot = Vec::with_capacity(a_nodes.len() * b_nodes.len());
        for &a in &a_nodes {
            for &b in &b_nodes {
                pot.push(potential(a, b));
            }
        }
        Operator2d {
            a_nodes,
            b_nodes,
            d_a,
            d_b,
            potential: pot,
            boundary,
        }
    }

    pub fn na(&self) -> usize {
        self.a_nodes.len()
    }

    pub fn nb(&self) -> usize {
        self.b_nodes.len()
    }

    fn ha(&self) -> f64 {
        self.a_nodes[1] - self.a_nodes[0]
    }

    fn hb(&self) -> f64 {
        self.b_nodes[1] - self.b_nodes[0]
    }

    /// Trapezoid weights of the flattened grid.
    pub fn weights(&self) -> Vec<f64> {
        let (wa, wb) = (trapezoid_weights(&self.a_nodes), trapezoid_weights(&self.b_nodes));
        wa.iter().flat_map(|x| wb.iter().map(move |y| x * y)).collect()
    }

    pub fn mass(&self, u: &[f64]) -> f64 {
        self.weights().iter().zip(u).map(|(w, v)| w * v).sum()
    }

    /// Unit mass deposited bilinearly around `(a, b)`.
    pub fn delta(&self, a: f64, b: f64) -> Result<Vec<f64>> {
        let inside = |nodes: &[f64], v: f64| v >= nodes[0] && v <= nodes[nodes.len() - 1];
        if !inside(&self.a_nodes, a) || !inside(&self.b_nodes, b) {
            return Err(Error::OutOfRange(format!("source ({a}, {b}) outside the PDE grid")));
        }
        let w = self.weights();
        let nb = self.nb();
        let (i, ta) = bracket(&self.a_nodes, a);
        let (j, tb) = bracket(&self.b_nodes, b);
        let mut u = vec![0.0; self.na() * nb];
        for (di, wa) in [(0, 1.0 - ta), (1, ta)] {
            for (dj, wb) in [(0, 1.0 - tb), (1, tb)] {
                let idx = (i + di) * nb + j + dj;
                if wa * wb > 0.0 {
                    u[idx] += wa * wb / w[idx];
                }
            }
        }
        Ok(u)
    }

    fn a_line(&self, j: usize, v_scale: f64) -> Line {
        let v: Vec<f64> = (0..self.na())
            .map(|i| v_scale * self.potential[i * self.nb() + j])
            .collect();
        line_operator(self.na(), self.ha(), self.d_a, &v, self.boundary)
    }

    fn b_line(&self, i: usize, v_scale: f64) -> Line {
        let nb = self.nb();
        let v: Vec<f64> = self.potential[i * nb..(i + 1) * nb]
            .iter()
            .map(|p| v_scale * p)
            .collect();
        line_operator(nb, self.hb(), self.d_b, &v, self.boundary)
    }

    /// `L u` on the flattened grid.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let (na, nb) = (self.na(), self.nb());
        let mut out = vec![0.0; na * nb];
        let mut col = vec![0.0; na];
        let mut tmp = vec![0.0; na];
        for j in 0..nb {
            for i in 0..na {
                col[i] = u[i * nb + j];
            }
            self.a_line(j, 1.0).apply(&col, &mut tmp);
            for i in 0..na {
                out[i * nb + j] += tmp[i];
            }
        }
        let mut row = vec![0.0; nb];
        for i in 0..na {
            self.b_line(i, 0.0).apply(&u[i * nb..(i + 1) * nb], &mut row);
            for j in 0..nb {
                out[i * nb + j] += row[j];
            }
        }
        if self.boundary == Boundary::Absorbing {
            self.zero_boundary(&mut out);
        }
        out
    }

    fn zero_boundary(&self, u: &mut [f64]) {
        let (na, nb) = (self.na(), self.nb());
        for i in 0..na {
            for j in 0..nb {
                if i == 0 || j == 0 || i == na - 1 || j == nb - 1 {
                    u[i * nb + j] = 0.0;
                }
            }
        }
    }

    /// `u ← (I + θ A_a)^{-1} u` with `A_a = −d_a ∂_a² + V/2`.
    fn implicit_a(&self, theta: f64, u: &mut [f64]) {
        let (na, nb) = (self.na(), self.nb());
        let absorbing = self.boundary == Boundary::Absorbing;
        let mut col = vec![0.0; na];
        for j in 0..nb {
            for i in 0..na {
                col[i] = u[i * nb + j];
            }
            self.a_line(j, 0.5).solve_shifted(theta, &mut col, absorbing);
            for i in 0..na {
                u[i * nb + j] = col[i];
            }
        }
    }

    fn implicit_b(&self, theta: f64, u: &mut [f64]) {
        let nb = self.nb();
        let absorbing = self.boundary == Boundary::Absorbing;
        for i in 0..self.na() {
            self.b_line(i, 0.5)
                .solve_shifted(theta, &mut u[i * nb..(i + 1) * nb], absorbing);
        }
    }

    /// `u ← (I − θ A_a) u`.
    fn explicit_a(&self, theta: f64, u: &mut [f64]) {
        let (na, nb) = (self.na(), self.nb());
        let mut col = vec![0.0; na];
        let mut tmp = vec![0.0; na];
        for j in 0..nb {
            for i in 0..na {
                col[i] = u[i * nb + j];
            }
            self.a_line(j, 0.5).apply(&col, &mut tmp);
            for i in 0..na {
                u[i * nb + j] = col[i] - theta * tmp[i];
            }
        }
    }

    fn explicit_b(&self, theta: f64, u: &mut [f64]) {
        let nb = self.nb();
        let mut tmp = vec![0.0; nb];
        for i in 0..self.na() {
            let row = &mut u[i * nb..(i + 1) * nb];
            self.b_line(i, 0.5).apply(row, &mut tmp);
            for j in 0..nb {
                row[j] -= theta * tmp[j];
            }
        }
    }
}

/// Evolves `u` from `initial` up to the setup horizon.
pub fn fp_evolve(op: &Operator2d, setup: &PdeSetup, initial: Vec<f64>) -> Result<FpSolution> {
    setup.validate()?;
    let dt = setup.dt;
    let w = op.weights();
    let mass_of = |u: &[f64]| -> f64 { w.iter().zip(u).map(|(a, b)| a * b).sum() };
    let v_min = op.potential.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let allowed_growth = (-dt * v_min).exp() * (1.0 + 1e-6);

    let mut u = initial;
    let mut m = mass_of(&u);
    let mut sol = FpSolution {
        times: vec![0.0],
        snapshots: vec![u.clone()],
        mass: vec![m],
        clipped: 0,
    };
    for step in 1..=setup.steps() {
        if step <= STARTUP_STEPS {
            for _ in 0..2 {
                op.implicit_a(0.5 * dt, &mut u);
                op.implicit_b(0.5 * dt, &mut u);
            }
        } else {
            op.explicit_b(0.5 * dt, &mut u);
            op.implicit_a(0.5 * dt, &mut u);
            op.explicit_a(0.5 * dt, &mut u);
            op.implicit_b(0.5 * dt, &mut u);
        }
        for v in u.iter_mut() {
            if *v < 0.0 {
                if *v < -CLIP_FLOOR {
                    sol.clipped += 1;
                }
                *v = 0.0;
            }
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("PDE state at step {step}")));
        }
        let next = mass_of(&u);
        if next > m * allowed_growth && next - m > 1e-300 {
            return Err(Error::UnstableStep { before: m, after: next });
        }
        m = next;
        if step.is_multiple_of(setup.record_every) {
            sol.times.push(step as f64 * dt);
            sol.snapshots.push(u.clone());
            sol.mass.push(m);
        }
    }
    Ok(sol)
}

/// Solves `(α + L) G = δ` by conjugate gradients in the trapezoid-weighted
/// inner product.
pub fn resolvent(op: &Operator2d, alpha: f64, delta: &[f64]) -> Result<Vec<f64>> {
    let w = op.weights();
    let n = delta.len();
    let mut interior = vec![true; n];
    if op.boundary == Boundary::Absorbing {
        let mut mask = vec![1.0; n];
        op.zero_boundary(&mut mask);
        for (f, m) in interior.iter_mut().zip(&mask) {
            *f = *m != 0.0;
        }
    }
    let matvec = |x: &[f64]| -> Vec<f64> {
        let lx = op.apply(x);
        (0..n)
            .map(|i| {
                if interior[i] {
                    w[i] * (alpha * x[i] + lx[i])
                } else {
                    0.0
                }
            })
            .collect()
    };
    let b: Vec<f64> = (0..n)
        .map(|i| if interior[i] { w[i] * delta[i] } else { 0.0 })
        .collect();
    let dot = |a: &[f64], b: &[f64]| -> f64 { a.iter().zip(b).map(|(x, y)| x * y).sum() };
    let mut x = vec![0.0; n];
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let target = 1e-24 * rr;
    for _ in 0..20 * n {
        if rr <= target {
            return Ok(x);
        }
        let ap = matvec(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return Err(Error::NonFinite("resolvent operator is not positive definite".into()));
        }
        let step = rr / pap;
        for i in 0..n {
            x[i] += step * p[i];
            r[i] -= step * ap[i];
        }
        let next = dot(&r, &r);
        for i in 0..n {
            p[i] = r[i] + next / rr * p[i];
        }
        rr = next;
    }
    Err(Error::NoConvergence {
        iterations: 20 * n,
        residual: (rr / dot(&b, &b)).sqrt(),
        history: Vec::new(),
    })
}

/// Distance between the growth of the second moments of a point source and
/// the heat-kernel values `2·d·T` per axis. Evaluated on `op` as given; pass a
/// zero potential for a pure-diffusion check.
pub fn spread_error(op: &Operator2d, setup: &PdeSetup, source: (f64, f64)) -> Result<f64> {
    let sol = fp_evolve(op, setup, op.delta(source.0, source.1)?)?;
    let w = op.weights();
    let moments = |u: &[f64]| {
        let (mut va, mut vb, mut k) = (0.0, 0.0, 0);
        for a in &op.a_nodes {
            for b in &op.b_nodes {
                va += w[k] * u[k] * (a - source.0).powi(2);
                vb += w[k] * u[k] * (b - source.1).powi(2);
                k += 1;
            }
        }
        (va, vb)
    };
    let (a0, b0) = moments(&sol.snapshots[0]);
    let last = sol.snapshots.last().expect("at least one snapshot");
    let (a1, b1) = moments(last);
    let t = *sol.times.last().expect("at least one time");
    let (ea, eb) = (a1 - a0 - 2.0 * op.d_a * t, b1 - b0 - 2.0 * op.d_b * t);
    Ok((ea * ea + eb * eb).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup(n: usize, dt: f64, horizon: f64, boundary: Boundary) -> PdeSetup {
        PdeSetup {
            operator: OperatorKind::Firm,
            x_axis: AxisSpec { min: -8.0, max: 8.0, n },
            capital_axis: AxisSpec { min: -8.0, max: 8.0, n },
            dt,
            horizon,
            record_every: 10,
            boundary,
        }
    }

    #[test]
    fn pure_diffusion_spreads_like_the_heat_kernel() {
        let s = setup(128, 1e-3, 1.0, Boundary::Absorbing);
        let op = Operator2d::new(s.x_axis, s.capital_axis, 0.5, 0.25, |_, _| 0.0, s.boundary);
        let err = spread_error(&op, &s, (0.0, 0.0)).unwrap();
        assert!(err < 1e-4, "spread error {err}");
    }

    #[test]
    fn pure_diffusion_profile_is_second_order_accurate() {
        let gauss = |a: f64, b: f64, t: f64| (-(a * a + b * b) / (2.0 * t)).exp() / (2.0 * std::f64::consts::PI * t);
        let err_at = |n: usize| {
            let s = PdeSetup {
                horizon: 0.75,
                ..setup(n, 1e-3, 1.0, Boundary::Absorbing)
            };
            let op = Operator2d::new(s.x_axis, s.capital_axis, 0.5, 0.5, |_, _| 0.0, s.boundary);
            let init: Vec<f64> = op
                .a_nodes
                .iter()
                .flat_map(|a| op.b_nodes.iter().map(move |b| gauss(*a, *b, 0.25)))
                .collect();
            let sol = fp_evolve(&op, &s, init).unwrap();
            let last = sol.snapshots.last().unwrap();
            let w = op.weights();
            let mut k = 0;
            let mut e = 0.0;
            for a in &op.a_nodes {
                for b in &op.b_nodes {
                    e += w[k] * (last[k] - gauss(*a, *b, 1.0)).powi(2);
                    k += 1;
                }
            }
            e.sqrt()
        };
        let (coarse, fine) = (err_at(65), err_at(129));
        assert!(fine < 1e-3, "{fine}");
        assert!(coarse / fine > 3.5, "order ratio {}", coarse / fine);
    }

    #[test]
    fn reflecting_boundary_conserves_mass() {
        let s = setup(40, 1e-2, 2.0, Boundary::Reflecting);
        let op = Operator2d::new(s.x_axis, s.capital_axis, 0.5, 1.0, |_, _| 0.0, s.boundary);
        let sol = fp_evolve(&op, &s, op.delta(0.3, -1.1).unwrap()).unwrap();
        for m in &sol.mass {
            assert!((m - 1.0).abs() < 1e-8, "{m}");
        }
    }

    #[test]
    fn harmonic_ground_state_decays_at_one_half() {
        let s = PdeSetup {
            capital_axis: AxisSpec {
                min: -12.0,
                max: 12.0,
                n: 241,
            },
            x_axis: AxisSpec {
                min: -1.0,
                max: 1.0,
                n: 5,
            },
            ..setup(5, 1e-3, 12.0, Boundary::Reflecting)
        };
        let op = Operator2d::new(s.x_axis, s.capital_axis, 0.5, 1.0, |_, y| y * y / 4.0, s.boundary);
        let sol = fp_evolve(&op, &s, op.delta(0.0, 0.7).unwrap()).unwrap();
        let n = sol.mass.len();
        let (m1, m0) = (sol.mass[n - 1], sol.mass[n - 101]);
        let rate = (m0 / m1).ln() / (sol.times[n - 1] - sol.times[n - 101]);
        assert!((rate - 0.5).abs() < 0.005, "{rate}");
    }

    #[test]
    fn absorbing_mass_never_grows() {
        let s = setup(30, 5e-3, 1.0, Boundary::Absorbing);
        let op = Operator2d::new(s.x_axis, s.capital_axis, 0.5, 0.5, |a, _| 0.1 * a * a, s.boundary);
        let sol = fp_evolve(&op, &s, op.delta(0.0, 0.0).unwrap()).unwrap();
        for pair in sol.mass.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn resolvent_matches_time_integral() {
        let s = PdeSetup {
            record_every: 1,
            ..setup(33, 2e-3, 12.0, Boundary::Reflecting)
        };
        let op = Operator2d::new(
            s.x_axis,
            s.capital_axis,
            0.5,
            0.5,
            |a, b| 0.2 + 0.05 * (a * a + b * b),
            s.boundary,
        );
        let delta = op.delta(0.5, 0.5).unwrap();
        let g = resolvent(&op, 1.0, &delta).unwrap();
        let sol = fp_evolve(&op, &s, delta).unwrap();
        let idx = 20 * 33 + 14;
        let series = sol.series(idx);
        let lt = super::super::laplace_numeric(&sol.times, &series, 1.0).unwrap();
        assert!(((lt - g[idx]) / g[idx]).abs() < 1e-2, "{lt} vs {}", g[idx]);
    }
}
