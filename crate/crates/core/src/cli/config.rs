use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::background::SolverOptions;
use crate::model::{AxisSpec, FirmCoord, InvestorCoord, ModelSpec, SectorGrid, SectorValues};
use crate::oracle::{McSetup, PdeSetup};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub x: AxisSpec,
    pub k: AxisSpec,
    pub khat: AxisSpec,
}

impl GridConfig {
    pub fn build(&self) -> crate::Result<SectorGrid> {
        SectorGrid::uniform(self.x, self.k, self.khat)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Laplace variable; the model's `alpha` when absent.
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub firm_pde: Option<PdeSetup>,
    #[serde(default)]
    pub firm_source: Option<FirmCoord>,
    #[serde(default)]
    pub investor_pde: Option<PdeSetup>,
    #[serde(default)]
    pub investor_source: Option<InvestorCoord>,
    #[serde(default)]
    pub mc: Option<McSetup>,
}

/// One swept parameter: a dotted path into the configuration and its values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepAxis {
    pub parameter: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub grid: GridConfig,
    pub model: ModelSpec,
    #[serde(default)]
    pub solver: SolverOptions,
    /// Initial `K_X`; the midpoint of the capital axis when absent.
    #[serde(default)]
    pub init_kx: Option<SectorValues>,
    #[serde(default)]
    pub oracle: Option<OracleConfig>,
    #[serde(default)]
    pub sweep: Vec<SweepAxis>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    #[serde(default)]
    pub seed: Option<u64>,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl RunConfig {
    pub fn from_value(v: Value) -> anyhow::Result<RunConfig> {
        let cfg: RunConfig = serde_path_to_error::deserialize(v).map_err(|e| {
            let path = e.path().to_string();
            anyhow!("invalid configuration at `{path}`: {}", e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> anyhow::Result<RunConfig> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        text.parse::<RunConfig>()
            .with_context(|| format!("loading {}", path.display()))
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let grid = self.grid.build()?;
        self.model.validate(&grid)?;
        if let Some(init) = &self.init_kx {
            init.resolve(grid.nx(), "init_kx")?;
        }
        for axis in &self.sweep {
            if axis.values.is_empty() {
                bail!("sweep parameter `{}` has no values", axis.parameter);
            }
        }
        Ok(())
    }

    pub fn initial_kx(&self) -> crate::Result<Vec<f64>> {
        let nx = self.grid.x.n;
        match &self.init_kx {
            Some(v) => v.resolve(nx, "init_kx"),
            None => Ok(vec![0.5 * (self.grid.k.min + self.grid.k.max); nx]),
        }
    }

    /// Every combination of sweep values, first axis slowest.
    pub fn sweep_tuples(&self) -> Vec<Vec<f64>> {
        let mut tuples = vec![Vec::new()];
        for axis in &self.sweep {
            tuples = tuples
                .into_iter()
                .flat_map(|t| {
                    axis.values.iter().map(move |v| {
                        let mut next = t.clone();
                        next.push(*v);
                        next
                    })
                })
                .collect();
        }
        tuples
    }

    /// Copy of this configuration with the sweep parameters set to `values`.
    pub fn with_parameters(&self, values: &[f64]) -> anyhow::Result<RunConfig> {
        let mut v = serde_json::to_value(self)?;
        for (axis, value) in self.sweep.iter().zip(values) {
            set_path(&mut v, &axis.parameter, *value)?;
        }
        if let Value::Object(map) = &mut v {
            map.insert("sweep".into(), Value::Array(Vec::new()));
        }
        RunConfig::from_value(v)
    }
}

impl std::str::FromStr for RunConfig {
    type Err = anyhow::Error;

    fn from_str(text: &str) -> anyhow::Result<RunConfig> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            anyhow!("invalid configuration at `{path}`: {}", e.into_inner())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set_path(root: &mut Value, path: &str, value: f64) -> anyhow::Result<()> {
    let mut cur = root;
    for key in path.split('.') {
        cur = match cur {
            Value::Object(map) => map
                .get_mut(key)
                .ok_or_else(|| anyhow!("sweep parameter `{path}`: no key `{key}`"))?,
            Value::Array(items) => {
                let i: usize = key
                    .parse()
                    .map_err(|_| anyhow!("sweep parameter `{path}`: `{key}` is not an index"))?;
                items
                    .get_mut(i)
                    .ok_or_else(|| anyhow!("sweep parameter `{path}`: index {i} out of range"))?
            }
            _ => bail!("sweep parameter `{path}`: `{key}` is not a container"),
        };
    }
    if !cur.is_number() {
        bail!("sweep parameter `{path}` is not numeric");
    }
    *cur = serde_json::json!(value);
    Ok(())
}
