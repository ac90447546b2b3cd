//! Registry of parametric model functions with analytic first and second
//! derivatives.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::bracket;

/// Value with first and second derivative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jet {
    pub v: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet {
    pub fn constant(v: f64) -> Self {
        Jet { v, d1: 0.0, d2: 0.0 }
    }
}

/// One-argument function family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Curve {
    Constant {
        value: f64,
    },
    Affine {
        intercept: f64,
        slope: f64,
    },
    /// `scale · v^exponent`, defined for `v > 0`.
    Power {
        scale: f64,
        exponent: f64,
    },
    /// `low + (high - low) / (1 + e^{-steepness (v - midpoint)})`.
    Logistic {
        low: f64,
        high: f64,
        midpoint: f64,
        steepness: f64,
    },
    /// `scale · e^{rate v}`.
    Exponential {
        scale: f64,
        rate: f64,
    },
    /// `Σ coeffs[i] v^i`.
    Polynomial {
        coeffs: Vec<f64>,
    },
    /// `mean + amplitude · cos(frequency v + phase)`.
    Cosine {
        mean: f64,
        amplitude: f64,
        frequency: f64,
        #[serde(default)]
        phase: f64,
    },
    /// Piecewise-linear interpolation, held constant beyond the end nodes.
    Tabulated {
        nodes: Vec<f64>,
        values: Vec<f64>,
    },
    Scaled {
        base: Box<Curve>,
        factor: f64,
    },
}

impl Curve {
    pub fn constant(value: f64) -> Self {
        Curve::Constant { value }
    }

    pub fn affine(intercept: f64, slope: f64) -> Self {
        Curve::Affine { intercept, slope }
    }

    pub fn eval(&self, v: f64) -> f64 {
        self.jet(v).v
    }

    pub fn jet(&self, v: f64) -> Jet {
        match self {
            Curve::Constant { value } => Jet::constant(*value),
            Curve::Affine { intercept, slope } => Jet {
                v: intercept + slope * v,
                d1: *slope,
                d2: 0.0,
            },
            Curve::Power { scale, exponent } => {
                let a = *exponent;
                let p = scale * v.powf(a);
                Jet {
                    v: p,
                    d1: a * p / v,
                    d2: a * (a - 1.0) * p / (v * v),
                }
            }
            Curve::Logistic {
                low,
                high,
                midpoint,
                steepness,
            } => {
                let k = *steepness;
                let s = 1.0 / (1.0 + (-k * (v - midpoint)).exp());
                let span = high - low;
                Jet {
                    v: low + span * s,
                    d1: span * k * s * (1.0 - s),
                    d2: span * k * k * s * (1.0 - s) * (1.0 - 2.0 * s),
                }
            }
            Curve::Exponential { scale, rate } => {
                let e = scale * (rate * v).exp();
                Jet {
                    v: e,
                    d1: rate * e,
                    d2: rate * rate * e,
                }
            }
            Curve::Polynomial { coeffs } => {
                let (mut p, mut dp, mut ddp) = (0.0, 0.0, 0.0);
                for c in coeffs.iter().rev() {
                    ddp = ddp * v + 2.0 * dp;
                    dp = dp * v + p;
                    p = p * v + c;
                }
                Jet { v: p, d1: dp, d2: ddp }
            }
            Curve::Cosine {
                mean,
                amplitude,
                frequency,
                phase,
            } => {
                let arg = frequency * v + phase;
                Jet {
                    v: mean + amplitude * arg.cos(),
                    d1: -amplitude * frequency * arg.sin(),
                    d2: -amplitude * frequency * frequency * arg.cos(),
                }
            }
            Curve::Tabulated { nodes, values } => {
                let n = nodes.len();
                if v <= nodes[0] {
                    return Jet::constant(values[0]);
                }
                if v >= nodes[n - 1] {
                    return Jet::constant(values[n - 1]);
                }
                let (i, w) = bracket(nodes, v);
                let slope = (values[i + 1] - values[i]) / (nodes[i + 1] - nodes[i]);
                Jet {
                    v: (1.0 - w) * values[i] + w * values[i + 1],
                    d1: slope,
                    d2: 0.0,
                }
            }
            Curve::Scaled { base, factor } => {
                let j = base.jet(v);
                Jet {
                    v: factor * j.v,
                    d1: factor * j.d1,
                    d2: factor * j.d2,
                }
            }
        }
    }

    /// True when the curve does not depend on its argument.
    pub fn is_constant(&self) -> bool {
        match self {
            Curve::Constant { .. } => true,
            Curve::Affine { slope, .. } => *slope == 0.0,
            Curve::Power { exponent, scale } => *exponent == 0.0 || *scale == 0.0,
            Curve::Logistic {
                low, high, steepness, ..
            } => low == high || *steepness == 0.0,
            Curve::Exponential { rate, scale } => *rate == 0.0 || *scale == 0.0,
            Curve::Polynomial { coeffs } => coeffs.iter().skip(1).all(|c| *c == 0.0),
            Curve::Cosine {
                amplitude, frequency, ..
            } => *amplitude == 0.0 || *frequency == 0.0,
            Curve::Tabulated { values, .. } => values.windows(2).all(|w| w[0] == w[1]),
            Curve::Scaled { base, factor } => *factor == 0.0 || base.is_constant(),
        }
    }

    pub fn validate(&self, name: &str) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidSpec(format!("{name}: {msg}")));
        match self {
            Curve::Tabulated { nodes, values } => {
                if nodes.len() < 2 || nodes.len() != values.len() {
                    return bad("tabulated curve needs ≥ 2 nodes and matching values");
                }
                if nodes.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("tabulated nodes must be strictly increasing");
                }
            }
            Curve::Polynomial { coeffs } if coeffs.is_empty() => {
                return bad("polynomial needs at least one coefficient");
            }
            Curve::Scaled { base, .. } => base.validate(name)?,
            _ => {}
        }
        if !self.params_finite() {
            return bad("non-finite parameter");
        }
        Ok(())
    }

    fn params_finite(&self) -> bool {
        let all = |xs: &[f64]| xs.iter().all(|x| x.is_finite());
        match self {
            Curve::Constant { value } => value.is_finite(),
            Curve::Affine { intercept, slope } => all(&[*intercept, *slope]),
            Curve::Power { scale, exponent } => all(&[*scale, *exponent]),
            Curve::Logistic {
                low,
                high,
                midpoint,
                steepness,
            } => all(&[*low, *high, *midpoint, *steepness]),
            Curve::Exponential { scale, rate } => all(&[*scale, *rate]),
            Curve::Polynomial { coeffs } => all(coeffs),
            Curve::Cosine {
                mean,
                amplitude,
                frequency,
                phase,
            } => all(&[*mean, *amplitude, *frequency, *phase]),
            Curve::Tabulated { nodes, values } => all(nodes) && all(values),
            Curve::Scaled { base, factor } => factor.is_finite() && base.params_finite(),
        }
    }

    /// Range covered by a tabulated curve, if any.
    pub fn tabulated_range(&self) -> Option<(f64, f64)> {
        match self {
            Curve::Tabulated { nodes, .. } => Some((nodes[0], nodes[nodes.len() - 1])),
            Curve::Scaled { base, .. } => base.tabulated_range(),
            _ => None,
        }
    }
}

/// Partial derivatives of a two-argument function `S(K, X)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceJet {
    pub v: f64,
    pub dk: f64,
    pub dx: f64,
    pub dkk: f64,
    pub dxx: f64,
    pub dkx: f64,
}

/// Two-argument function family over capital and sector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Surface {
    Constant {
        value: f64,
    },
    /// `intercept + k·K + x·X`.
    Affine {
        intercept: f64,
        k: f64,
        x: f64,
    },
    /// `scale · K^exponent · profile(X)`.
    CobbDouglas {
        scale: f64,
        exponent: f64,
        profile: Curve,
    },
    /// `capital(K) · profile(X)`.
    Product {
        capital: Curve,
        profile: Curve,
    },
    /// `capital(K) + profile(X)`.
    Sum {
        capital: Curve,
        profile: Curve,
    },
    /// Bilinear interpolation on a `k_nodes × x_nodes` table, `values[i][j]` at
    /// `(k_nodes[i], x_nodes[j])`.
    Tabulated {
        k_nodes: Vec<f64>,
        x_nodes: Vec<f64>,
        values: Vec<Vec<f64>>,
    },
    Shifted {
        base: Box<Surface>,
        offset: f64,
    },
}

impl Surface {
    pub fn constant(value: f64) -> Self {
        Surface::Constant { value }
    }

    pub fn eval(&self, k: f64, x: f64) -> f64 {
        self.jet(k, x).v
    }

    pub fn jet(&self, k: f64, x: f64) -> SurfaceJet {
        match self {
            Surface::Constant { value } => SurfaceJet {
                v: *value,
                dk: 0.0,
                dx: 0.0,
                dkk: 0.0,
                dxx: 0.0,
                dkx: 0.0,
            },
            Surface::Affine { intercept, k: a, x: b } => SurfaceJet {
                v: intercept + a * k + b * x,
                dk: *a,
                dx: *b,
                dkk: 0.0,
                dxx: 0.0,
                dkx: 0.0,
            },
            Surface::CobbDouglas {
                scale,
                exponent,
                profile,
            } => product_jet(
                Curve::Power {
                    scale: *scale,
                    exponent: *exponent,
                }
                .jet(k),
                profile.jet(x),
            ),
            Surface::Product { capital, profile } => product_jet(capital.jet(k), profile.jet(x)),
            Surface::Sum { capital, profile } => {
                let a = capital.jet(k);
                let b = profile.jet(x);
                SurfaceJet {
                    v: a.v + b.v,
                    dk: a.d1,
                    dx: b.d1,
                    dkk: a.d2,
                    dxx: b.d2,
                    dkx: 0.0,
                }
            }
            Surface::Tabulated {
                k_nodes,
                x_nodes,
                values,
            } => {
                let (i, wk) = bracket(k_nodes, k);
                let (j, wx) = bracket(x_nodes, x);
                let (v00, v01) = (values[i][j], values[i][j + 1]);
                let (v10, v11) = (values[i + 1][j], values[i + 1][j + 1]);
                let hk = k_nodes[i + 1] - k_nodes[i];
                let hx = x_nodes[j + 1] - x_nodes[j];
                let v = (1.0 - wk) * ((1.0 - wx) * v00 + wx * v01) + wk * ((1.0 - wx) * v10 + wx * v11);
                let dk = ((1.0 - wx) * (v10 - v00) + wx * (v11 - v01)) / hk;
                let dx = ((1.0 - wk) * (v01 - v00) + wk * (v11 - v10)) / hx;
                let dkx = (v11 - v10 - v01 + v00) / (hk * hx);
                SurfaceJet {
                    v,
                    dk,
                    dx,
                    dkk: 0.0,
                    dxx: 0.0,
                    dkx,
                }
            }
            Surface::Shifted { base, offset } => {
                let mut j = base.jet(k, x);
                j.v += offset;
                j
            }
        }
    }

    /// True when the surface has no sector dependence.
    pub fn is_x_independent(&self) -> bool {
        match self {
            Surface::Constant { .. } => true,
            Surface::Affine { x, .. } => *x == 0.0,
            Surface::CobbDouglas { profile, .. } => profile.is_constant(),
            Surface::Product { profile, .. } | Surface::Sum { profile, .. } => profile.is_constant(),
            Surface::Tabulated { values, .. } => values.iter().all(|row| row.windows(2).all(|w| w[0] == w[1])),
            Surface::Shifted { base, .. } => base.is_x_independent(),
        }
    }

    pub fn validate(&self, name: &str, x_range: (f64, f64)) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidSpec(format!("{name}: {msg}")));
        let covers = |r: Option<(f64, f64)>| match r {
            Some((lo, hi)) => lo <= x_range.0 && hi >= x_range.1,
            None => true,
        };
        match self {
            Surface::Constant { value } if !value.is_finite() => bad("non-finite value".into()),
            Surface::Affine { intercept, k, x } if !(intercept.is_finite() && k.is_finite() && x.is_finite()) => {
                bad("non-finite parameter".into())
            }
            Surface::CobbDouglas {
                scale,
                exponent,
                profile,
            } => {
                if !(scale.is_finite() && exponent.is_finite()) {
                    return bad("non-finite parameter".into());
                }
                profile.validate(name)?;
                if !covers(profile.tabulated_range()) {
                    return bad("tabulated profile does not cover the sector range".into());
                }
                Ok(())
            }
            Surface::Product { capital, profile } | Surface::Sum { capital, profile } => {
                capital.validate(name)?;
                profile.validate(name)?;
                if !covers(profile.tabulated_range()) {
                    return bad("tabulated profile does not cover the sector range".into());
                }
                Ok(())
            }
            Surface::Tabulated {
                k_nodes,
                x_nodes,
                values,
            } => {
                if k_nodes.len() < 2 || x_nodes.len() < 2 {
                    return bad("tabulated surface needs ≥ 2 nodes per axis".into());
                }
                if k_nodes.windows(2).any(|w| w[1] <= w[0]) || x_nodes.windows(2).any(|w| w[1] <= w[0]) {
                    return bad("tabulated nodes must be strictly increasing".into());
                }
                if values.len() != k_nodes.len() || values.iter().any(|row| row.len() != x_nodes.len()) {
                    return bad("tabulated values must be k_nodes × x_nodes".into());
                }
                if values.iter().flatten().any(|v| !v.is_finite()) {
                    return bad("non-finite table entry".into());
                }
                if !covers(Some((x_nodes[0], x_nodes[x_nodes.len() - 1]))) {
                    return bad("tabulated surface does not cover the sector range".into());
                }
                Ok(())
            }
            Surface::Shifted { base, offset } => {
                if !offset.is_finite() {
                    return bad("non-finite offset".into());
                }
                base.validate(name, x_range)
            }
            _ => Ok(()),
        }
    }

    /// The same surface plus a constant.
    pub fn shifted(&self, offset: f64) -> Surface {
        Surface::Shifted {
            base: Box::new(self.clone()),
            offset,
        }
    }
}

fn product_jet(a: Jet, b: Jet) -> SurfaceJet {
    SurfaceJet {
        v: a.v * b.v,
        dk: a.d1 * b.v,
        dx: a.v * b.d1,
        dkk: a.d2 * b.v,
        dxx: a.v * b.d2,
        dkx: a.d1 * b.d1,
    }
}

/// How the shape parameter `s` enters the attractiveness response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapeRole {
    /// `F2(s, v) = curve(v)`.
    #[default]
    None,
    /// `F2(s, v) = s · curve(v)`.
    Scale,
    /// `F2(s, v) = curve(v)^s`.
    Exponent,
    /// `F2(s, v) = curve(s · v)`.
    Steepness,
}

/// Attractiveness response `factor · F2(s, v)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct F2Spec {
    pub curve: Curve,
    #[serde(default)]
    pub shape: ShapeRole,
    #[serde(default = "one")]
    pub factor: f64,
}

fn one() -> f64 {
    1.0
}

impl F2Spec {
    pub fn new(curve: Curve) -> Self {
        F2Spec {
            curve,
            shape: ShapeRole::None,
            factor: 1.0,
        }
    }

    /// Value and derivatives in `v` at fixed `s`.
    pub fn jet(&self, s: f64, v: f64) -> Jet {
        let j = match self.shape {
            ShapeRole::None => self.curve.jet(v),
            ShapeRole::Scale => {
                let j = self.curve.jet(v);
                Jet {
                    v: s * j.v,
                    d1: s * j.d1,
                    d2: s * j.d2,
                }
            }
            ShapeRole::Exponent => {
                let j = self.curve.jet(v);
                let p = j.v.powf(s);
                let l1 = j.d1 / j.v;
                Jet {
                    v: p,
                    d1: s * p * l1,
                    d2: s * p * ((s - 1.0) * l1 * l1 + j.d2 / j.v),
                }
            }
            ShapeRole::Steepness => {
                let j = self.curve.jet(s * v);
                Jet {
                    v: j.v,
                    d1: s * j.d1,
                    d2: s * s * j.d2,
                }
            }
        };
        Jet {
            v: self.factor * j.v,
            d1: self.factor * j.d1,
            d2: self.factor * j.d2,
        }
    }

    pub fn eval(&self, s: f64, v: f64) -> f64 {
        self.jet(s, v).v
    }

    /// Same response multiplied by `c`.
    pub fn scaled(&self, c: f64) -> F2Spec {
        F2Spec {
            factor: self.factor * c,
            ..self.clone()
        }
    }
}

/// The model's function registry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionSet {
    /// Expected long-term return `R(K, X)`.
    #[serde(rename = "R")]
    pub big_r: Surface,
    /// Short-term return `r(K, X)`.
    pub r: Surface,
    /// Mobility modulation `H(K)`.
    #[serde(rename = "H")]
    pub h: Curve,
    /// Long-term preference `F0(v)`.
    #[serde(rename = "F0")]
    pub f0: Curve,
    /// Price-variation response `F1(v)`.
    #[serde(rename = "F1")]
    pub f1: Curve,
    /// Optional linear dependence of `F1` on the capitalization gap: `F1(v, Γ) = F1(v) + f1_gamma · Γ`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub f1_gamma: Option<f64>,
    #[serde(rename = "F2")]
    pub f2: F2Spec,
}

impl FunctionSet {
    /// Everything constant: `R = r = 1`, `H = 1`, `F0 = F1 = 0`, `F2 = 1`.
    pub fn flat() -> Self {
        FunctionSet {
            big_r: Surface::constant(1.0),
            r: Surface::constant(0.0),
            h: Curve::constant(1.0),
            f0: Curve::constant(0.0),
            f1: Curve::constant(0.0),
            f1_gamma: None,
            f2: F2Spec::new(Curve::constant(1.0)),
        }
    }

    pub fn f1_with_gamma(&self, v: f64, gamma_gap: f64) -> f64 {
        self.f1.eval(v) + self.f1_gamma.unwrap_or(0.0) * gamma_gap
    }

    pub fn validate(&self, x_range: (f64, f64)) -> Result<()> {
        self.big_r.validate("R", x_range)?;
        self.r.validate("r", x_range)?;
        self.h.validate("H")?;
        self.f0.validate("F0")?;
        self.f1.validate("F1")?;
        self.f2.curve.validate("F2")?;
        if !(self.f2.factor.is_finite() && self.f2.factor > 0.0) {
            return Err(Error::InvalidSpec("F2 factor must be positive".into()));
        }
        if let Some(g) = self.f1_gamma {
            if !g.is_finite() {
                return Err(Error::InvalidSpec("f1_gamma must be finite".into()));
            }
        }
        Ok(())
    }

    /// Returns a copy with `R` shifted by `c`.
    pub fn with_shifted_return(&self, c: f64) -> Self {
        FunctionSet {
            big_r: self.big_r.shifted(c),
            ..self.clone()
        }
    }
}
