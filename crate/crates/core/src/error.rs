use thiserror::Error;

/// Errors raised by the numerical layers. The CLI maps these onto exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),
    #[error("coordinate out of range: {0}")]
    OutOfRange(String),
    #[error("zero denominator: {0}")]
    ZeroDenominator(String),
    #[error("f vanishes at sector {x}")]
    ZeroF { x: f64 },
    #[error("competition strength tau must be positive")]
    NonPositiveTau,
    #[error("degenerate sector volume: V = {v}, V0 = {v0}")]
    DegenerateVolume { v: f64, v0: f64 },
    #[error("parabolic cylinder function outside supported envelope (p = {p}, z = {z})")]
    PcfOutOfEnvelope { p: f64, z: f64 },
    #[error("fixed point did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },
    #[error("unstable time step: mass grew from {before:e} to {after:e}")]
    UnstableStep { before: f64, after: f64 },
    #[error("laplace integrand tail too heavy: last/peak = {ratio:e}")]
    TailTooHeavy { ratio: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;
