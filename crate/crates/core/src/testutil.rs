use crate::background::{solve_selfconsistent, BackgroundState, SolverOptions};
use crate::model::{AxisSpec, FunctionSet, ModelSpec, SectorGrid, Surface};

pub fn grid() -> SectorGrid {
    SectorGrid::uniform(
        AxisSpec {
            min: -1.0,
            max: 1.0,
            n: 9,
        },
        AxisSpec {
            min: 0.05,
            max: 6.0,
            n: 120,
        },
        AxisSpec {
            min: 0.01,
            max: 10.0,
            n: 300,
        },
    )
    .unwrap()
}

/// Constant short-term return, return rising linearly across sectors.
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

pub fn solve(spec: &ModelSpec) -> BackgroundState {
    let g = grid();
    solve_selfconsistent(spec, &g, &vec![1.0; g.nx()], &SolverOptions::default()).unwrap()
}
