//! Independent numerical ground truth: Fokker–Planck evolution of the kernel
//! operators, Langevin Monte Carlo of the microdynamics and numerical Laplace
//! transforms.

mod fp;
mod mc;
mod report;

pub use fp::{fp_evolve, resolvent, spread_error, Boundary, FpSolution, Operator2d, OperatorKind, PdeSetup};
pub use mc::{mc_simulate, Histogram2d, McResult, McSetup};
pub use report::{
    compare_bulk, firm_comparison, firm_operator, investor_comparison, investor_operator, KernelComparison,
    OracleReport, RegionError,
};

use crate::error::{Error, Result};
use crate::numerics::simpson_uniform;

/// Tail samples must fall below this fraction of the peak.
pub const TAIL_FRACTION: f64 = 1e-6;

/// `∫₀^∞ e^{−αt} f(t) dt` from uniform samples: composite Simpson over the
/// record plus an exponential extrapolation of the tail.
pub fn laplace_numeric(times: &[f64], values: &[f64], alpha: f64) -> Result<f64> {
    let n = times.len();
    if n < 3 || values.len() != n {
        return Err(Error::InvalidSpec(
            "Laplace transform needs ≥ 3 matching samples".into(),
        ));
    }
    let h = times[1] - times[0];
    if !(h > 0.0) || times.windows(2).any(|w| ((w[1] - w[0]) - h).abs() > 1e-9 * h.max(1.0)) {
        return Err(Error::InvalidSpec("Laplace samples must be uniformly spaced".into()));
    }
    let weighted: Vec<f64> = times.iter().zip(values).map(|(t, v)| (-alpha * t).exp() * v).collect();
    let peak = weighted.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Ok(0.0);
    }
    let (last, prev) = (weighted[n - 1], weighted[n - 2]);
    let ratio = last.abs() / peak;
    if ratio > TAIL_FRACTION {
        return Err(Error::TailTooHeavy { ratio });
    }
    let tail = if last > 0.0 && prev > last {
        last * h / (prev / last).ln()
    } else {
        0.0
    };
    Ok(simpson_uniform(&weighted, h) + tail)
}
