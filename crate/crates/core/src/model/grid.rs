use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{linspace, trapezoid_weights};

/// Uniform axis description used by configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisSpec {
    pub min: f64,
    pub max: f64,
    pub n: usize,
}

impl AxisSpec {
    pub fn nodes(&self) -> Vec<f64> {
        linspace(self.min, self.max, self.n)
    }
}

/// Spacing summary of one axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Spacing {
    pub min: f64,
    pub max: f64,
    pub uniform: bool,
}

impl Spacing {
    fn of(nodes: &[f64]) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, 0.0_f64);
        for w in nodes.windows(2) {
            let h = w[1] - w[0];
            lo = lo.min(h);
            hi = hi.max(h);
        }
        Spacing {
            min: lo,
            max: hi,
            uniform: hi - lo <= 1e-9 * hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct GridNodes {
    x_nodes: Vec<f64>,
    k_nodes: Vec<f64>,
    khat_nodes: Vec<f64>,
}

/// Sector axis `X`, firm capital axis `K` and investor capital axis `K̂`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridNodes", into = "GridNodes")]
pub struct SectorGrid {
    x_nodes: Vec<f64>,
    k_nodes: Vec<f64>,
    khat_nodes: Vec<f64>,
    x_spacing: Spacing,
    k_spacing: Spacing,
    khat_spacing: Spacing,
    wx: Vec<f64>,
    wk: Vec<f64>,
    wkhat: Vec<f64>,
}

impl TryFrom<GridNodes> for SectorGrid {
    type Error = Error;
    fn try_from(g: GridNodes) -> Result<Self> {
        SectorGrid::new(g.x_nodes, g.k_nodes, g.khat_nodes)
    }
}

impl From<SectorGrid> for GridNodes {
    fn from(g: SectorGrid) -> Self {
        GridNodes {
            x_nodes: g.x_nodes,
            k_nodes: g.k_nodes,
            khat_nodes: g.khat_nodes,
        }
    }
}

fn check_axis(name: &str, nodes: &[f64], min_len: usize, positive: bool) -> Result<()> {
    if nodes.len() < min_len {
        return Err(Error::InvalidGrid(format!(
            "{name} needs at least {min_len} nodes, got {}",
            nodes.len()
        )));
    }
    if nodes.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidGrid(format!("{name} has non-finite nodes")));
    }
    if nodes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidGrid(format!("{name} must be strictly increasing")));
    }
    if positive && nodes[0] <= 0.0 {
        return Err(Error::InvalidGrid(format!("{name} must be strictly positive")));
    }
    Ok(())
}

impl SectorGrid {
    pub fn new(x_nodes: Vec<f64>, k_nodes: Vec<f64>, khat_nodes: Vec<f64>) -> Result<Self> {
        check_axis("x_nodes", &x_nodes, 3, false)?;
        check_axis("k_nodes", &k_nodes, 3, true)?;
        check_axis("khat_nodes", &khat_nodes, 3, true)?;
        Ok(SectorGrid {
            x_spacing: Spacing::of(&x_nodes),
            k_spacing: Spacing::of(&k_nodes),
            khat_spacing: Spacing::of(&khat_nodes),
            wx: trapezoid_weights(&x_nodes),
            wk: trapezoid_weights(&k_nodes),
            wkhat: trapezoid_weights(&khat_nodes),
            x_nodes,
            k_nodes,
            khat_nodes,
        })
    }

    pub fn uniform(x: AxisSpec, k: AxisSpec, khat: AxisSpec) -> Result<Self> {
        SectorGrid::new(x.nodes(), k.nodes(), khat.nodes())
    }

    pub fn x(&self) -> &[f64] {
        &self.x_nodes
    }
    pub fn k(&self) -> &[f64] {
        &self.k_nodes
    }
    pub fn khat(&self) -> &[f64] {
        &self.khat_nodes
    }
    pub fn nx(&self) -> usize {
        self.x_nodes.len()
    }
    pub fn nk(&self) -> usize {
        self.k_nodes.len()
    }
    pub fn nkhat(&self) -> usize {
        self.khat_nodes.len()
    }
    pub fn x_spacing(&self) -> Spacing {
        self.x_spacing
    }
    pub fn k_spacing(&self) -> Spacing {
        self.k_spacing
    }
    pub fn khat_spacing(&self) -> Spacing {
        self.khat_spacing
    }
    /// Trapezoid weights along `X`.
    pub fn wx(&self) -> &[f64] {
        &self.wx
    }
    /// Trapezoid weights along `K`.
    pub fn wk(&self) -> &[f64] {
        &self.wk
    }
    /// Trapezoid weights along `K̂`.
    pub fn wkhat(&self) -> &[f64] {
        &self.wkhat
    }

    pub fn x_range(&self) -> (f64, f64) {
        (self.x_nodes[0], self.x_nodes[self.nx() - 1])
    }
    pub fn k_range(&self) -> (f64, f64) {
        (self.k_nodes[0], self.k_nodes[self.nk() - 1])
    }
    pub fn khat_range(&self) -> (f64, f64) {
        (self.khat_nodes[0], self.khat_nodes[self.nkhat() - 1])
    }

    /// Total sector volume.
    pub fn volume(&self) -> f64 {
        let (a, b) = self.x_range();
        b - a
    }

    pub fn contains_x(&self, x: f64) -> bool {
        let (a, b) = self.x_range();
        let tol = 1e-12 * (b - a);
        x >= a - tol && x <= b + tol
    }

    /// Index of the node equal to `x` up to rounding, if any.
    pub fn x_node_index(&self, x: f64) -> Option<usize> {
        let tol = 1e-12 * self.volume();
        let i = self.x_nodes.partition_point(|&v| v < x - tol);
        (i < self.nx() && (self.x_nodes[i] - x).abs() <= tol).then_some(i)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn axis(min: f64, max: f64, n: usize) -> AxisSpec {
        AxisSpec { min, max, n }
    }

    #[test]
    fn rejects_short_or_unsorted_axes() {
        assert!(SectorGrid::new(vec![0.0, 1.0], vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]).is_err());
        assert!(SectorGrid::new(vec![0.0, 2.0, 1.0], vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]).is_err());
        assert!(SectorGrid::new(vec![0.0, 1.0, 2.0], vec![0.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn uniform_grid_metadata() {
        let g = SectorGrid::uniform(axis(-1.0, 1.0, 5), axis(0.5, 2.5, 9), axis(0.1, 4.0, 4)).unwrap();
        assert!(g.x_spacing().uniform);
        assert!((g.x_spacing().min - 0.5).abs() < 1e-15);
        assert!((g.wx().iter().sum::<f64>() - 2.0).abs() < 1e-15);
        assert_eq!(g.x_node_index(0.5), Some(3));
        assert_eq!(g.x_node_index(0.4), None);
    }

    #[test]
    fn serde_round_trip_revalidates() {
        let g = SectorGrid::uniform(axis(0.0, 1.0, 3), axis(1.0, 2.0, 3), axis(1.0, 2.0, 3)).unwrap();
        let text = serde_json::to_string(&g).unwrap();
        let back: SectorGrid = serde_json::from_str(&text).unwrap();
        assert_eq!(g, back);
        let bad = r#"{"x_nodes":[0,1],"k_nodes":[1,2,3],"khat_nodes":[1,2,3]}"#;
        assert!(serde_json::from_str::<SectorGrid>(bad).is_err());
    }
}
