#![allow(dead_code)]

use capfield::background::{solve_selfconsistent, BackgroundState, SolverOptions};
use capfield::model::{AxisSpec, Curve, FunctionSet, ModelSpec, SectorGrid, Surface};

pub fn axis(min: f64, max: f64, n: usize) -> AxisSpec {
    AxisSpec { min, max, n }
}

pub fn grid(x_half: f64, nx: usize, k_max: f64) -> SectorGrid {
    SectorGrid::uniform(axis(-x_half, x_half, nx), axis(0.05, k_max, 120), axis(0.01, 10.0, 300)).unwrap()
}

/// Return affine in the sector, constant short-term return.
pub fn sloped_spec(slope: f64) -> ModelSpec {
    let mut fs = FunctionSet::flat();
    fs.r = Surface::constant(0.5);
    fs.big_r = Surface::Affine {
        intercept: 2.0,
        k: 0.0,
        x: slope,
    };
    let mut spec = ModelSpec::baseline(fs);
    spec.gamma = 0.1;
    spec.n_firms = 2.0;
    spec
}

/// `R = K^0.3 (1 + 0.2 cos X)`, the smooth single-well landscape.
pub fn cobb_douglas_spec(tau: f64) -> ModelSpec {
    let mut spec = sloped_spec(0.0);
    spec.functions.big_r = Surface::CobbDouglas {
        scale: 1.0,
        exponent: 0.3,
        profile: Curve::Cosine {
            mean: 1.0,
            amplitude: 0.2,
            frequency: 1.0,
            phase: 0.0,
        },
    };
    spec.tau = tau;
    spec
}

pub fn solve_on(spec: &ModelSpec, grid: &SectorGrid) -> BackgroundState {
    solve_selfconsistent(spec, grid, &vec![1.0; grid.nx()], &SolverOptions::default()).unwrap()
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}
