//! Domain types, model parameters and the primitive evaluators built on them.

mod eval;
pub mod functions;
pub mod grid;

pub use eval::{
    allocated_capital, allocation_scale, eval_f, eval_f2hat, eval_g, eval_gamma, eval_u, f2_bar, f2_norm, f_sector,
    g_sector, r_norm, SectorSlice,
};
pub use functions::{Curve, F2Spec, FunctionSet, Jet, ShapeRole, Surface, SurfaceJet};
pub use grid::{AxisSpec, SectorGrid, Spacing};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Either one value for every sector or one value per sector node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SectorValues {
    Uniform(f64),
    Nodes(Vec<f64>),
}

impl SectorValues {
    pub fn resolve(&self, nx: usize, name: &str) -> Result<Vec<f64>> {
        match self {
            SectorValues::Uniform(v) => Ok(vec![*v; nx]),
            SectorValues::Nodes(v) if v.len() == nx => Ok(v.clone()),
            SectorValues::Nodes(v) => Err(Error::InvalidSpec(format!(
                "{name} has {} entries for {nx} sector nodes",
                v.len()
            ))),
        }
    }
}

/// Which competition difference enters the firm's effective inverse mobility.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlphaEffVariant {
    /// `τ/2 · (c_f − c_i)` with the drift factor evaluated on the allocation path.
    #[default]
    Appendix,
    /// `τ · (c_f − c_i)` with endpoint capital shifts.
    Text,
}

/// Scalar parameters and function registry of the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub sigma_x2: f64,
    pub sigma_k2: f64,
    pub sigma_xhat2: f64,
    pub sigma_khat2: f64,
    pub tau: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub nu: f64,
    pub alpha: f64,
    pub s_values: Vec<f64>,
    pub s_weights: Vec<f64>,
    pub functions: FunctionSet,
    /// Total number of firms `N`.
    pub n_firms: f64,
    /// Investors per sector `N̂(X̂)`.
    pub n_investors: SectorValues,
    /// `M` in the parabolic index `p = (M − A(X̂))/|f|`.
    #[serde(default)]
    pub m_param: f64,
    /// `A(X̂)` in the parabolic index.
    #[serde(default = "zero_sector_values")]
    pub a_x: SectorValues,
    /// Standard deviation of the firm capital profile around `K_X`.
    #[serde(default = "default_spread")]
    pub firm_capital_spread: f64,
    /// Competition strength scaled by `K_X/K` per agent.
    #[serde(default)]
    pub tau_capital_dependent: bool,
    #[serde(default)]
    pub alpha_eff_variant: AlphaEffVariant,
    /// Drop the `K_X` derivatives in the investor shift `F`.
    #[serde(default)]
    pub neglect_kx_derivatives: bool,
    /// Number of crossings kept in two-agent corrections.
    #[serde(default = "default_crossing_order")]
    pub crossing_order: usize,
}

fn zero_sector_values() -> SectorValues {
    SectorValues::Uniform(0.0)
}

fn default_spread() -> f64 {
    std::f64::consts::FRAC_1_SQRT_2
}

fn default_crossing_order() -> usize {
    1
}

impl ModelSpec {
    /// Unit variances, no interactions, flat functions, a single shape value.
    pub fn baseline(functions: FunctionSet) -> Self {
        ModelSpec {
            sigma_x2: 1.0,
            sigma_k2: 1.0,
            sigma_xhat2: 1.0,
            sigma_khat2: 1.0,
            tau: 1.0,
            gamma: 0.0,
            epsilon: 0.5,
            nu: 0.0,
            alpha: 1.0,
            s_values: vec![1.0],
            s_weights: vec![1.0],
            functions,
            n_firms: 1.0,
            n_investors: SectorValues::Uniform(1.0),
            m_param: 0.0,
            a_x: SectorValues::Uniform(0.0),
            firm_capital_spread: default_spread(),
            tau_capital_dependent: false,
            alpha_eff_variant: AlphaEffVariant::Appendix,
            neglect_kx_derivatives: false,
            crossing_order: 1,
        }
    }

    pub fn validate(&self, grid: &SectorGrid) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidSpec(m.to_string()));
        for (name, v) in [
            ("sigma_x2", self.sigma_x2),
            ("sigma_k2", self.sigma_k2),
            ("sigma_xhat2", self.sigma_xhat2),
            ("sigma_khat2", self.sigma_khat2),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidSpec(format!("{name} must be positive")));
            }
        }
        if !(self.tau.is_finite() && self.tau >= 0.0) {
            return bad("tau must be nonnegative");
        }
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return bad("gamma must be nonnegative");
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad("epsilon must lie in (0, 1)");
        }
        if !(self.nu.is_finite() && self.nu >= 0.0) {
            return bad("nu must be nonnegative");
        }
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if self.s_values.is_empty() || self.s_values.len() != self.s_weights.len() {
            return bad("s_values and s_weights must be non-empty and of equal length");
        }
        if self.s_weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("s_weights must be nonnegative");
        }
        if (self.s_weights.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return bad("s_weights must sum to 1");
        }
        if !(self.n_firms.is_finite() && self.n_firms > 0.0) {
            return bad("n_firms must be positive");
        }
        let nhat = self.n_investors.resolve(grid.nx(), "n_investors")?;
        if nhat.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("n_investors must be positive");
        }
        let a = self.a_x.resolve(grid.nx(), "a_x")?;
        if a.iter().any(|v| !v.is_finite()) || !self.m_param.is_finite() {
            return bad("m_param and a_x must be finite");
        }
        if !(self.firm_capital_spread.is_finite() && self.firm_capital_spread > 0.0) {
            return bad("firm_capital_spread must be positive");
        }
        if self.crossing_order != 1 {
            return bad("only single-crossing corrections (crossing_order = 1) are implemented");
        }
        self.functions.validate(grid.x_range())?;
        for &x in grid.x() {
            for &k in grid.k() {
                let r = self.functions.big_r.eval(k, x);
                if !(r.is_finite() && r > 0.0) {
                    return Err(Error::InvalidSpec(format!(
                        "R must be strictly positive, R({k}, {x}) = {r}"
                    )));
                }
                for &s in &self.s_values {
                    let f2 = self.functions.f2.eval(s, r);
                    if !(f2.is_finite() && f2 > 0.0) {
                        return Err(Error::InvalidSpec(format!(
                            "F2 must be strictly positive, F2({s}, {r}) = {f2}"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Returns a copy with `R` shifted by `c`.
    pub fn with_shifted_return(&self, c: f64) -> Self {
        ModelSpec {
            functions: self.functions.with_shifted_return(c),
            ..self.clone()
        }
    }

    /// Returns a copy with `F2` multiplied by `c`.
    pub fn with_scaled_attractiveness(&self, c: f64) -> Self {
        let mut out = self.clone();
        out.functions.f2 = self.functions.f2.scaled(c);
        out
    }
}

/// Firm state `(K, X, s)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FirmCoord {
    pub k: f64,
    pub x: f64,
    pub s: f64,
}

impl FirmCoord {
    pub fn new(k: f64, x: f64, s: f64) -> Self {
        FirmCoord { k, x, s }
    }

    pub fn validate(&self, spec: &ModelSpec, grid: &SectorGrid) -> Result<()> {
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(Error::OutOfRange(format!("firm capital {} must be positive", self.k)));
        }
        if !grid.contains_x(self.x) {
            return Err(Error::OutOfRange(format!("sector {} outside grid", self.x)));
        }
        if !spec
            .s_values
            .iter()
            .any(|s| (s - self.s).abs() <= 1e-12 * (1.0 + s.abs()))
        {
            return Err(Error::OutOfRange(format!("shape {} not among s_values", self.s)));
        }
        Ok(())
    }
}

/// Investor state `(K̂, X̂)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvestorCoord {
    pub khat: f64,
    pub xhat: f64,
}

impl InvestorCoord {
    pub fn new(khat: f64, xhat: f64) -> Self {
        InvestorCoord { khat, xhat }
    }

    pub fn validate(&self, grid: &SectorGrid) -> Result<()> {
        if !(self.khat.is_finite() && self.khat > 0.0) {
            return Err(Error::OutOfRange(format!(
                "investor capital {} must be positive",
                self.khat
            )));
        }
        if !grid.contains_x(self.xhat) {
            return Err(Error::OutOfRange(format!("sector {} outside grid", self.xhat)));
        }
        Ok(())
    }
}
