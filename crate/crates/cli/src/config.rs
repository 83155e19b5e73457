//! Run configuration files (TOML) and sweep grids.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spformer::nn::{Architecture, ModelConfig};
use spformer::pde::{PdeProblem, ProblemName};
use spformer::training::{LbfgsConfig, NtkConfig, TrainConfig};

use crate::{CliError, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelOverrides {
    pub d_emb: Option<usize>,
    pub d_hidden: Option<usize>,
    pub d_ff: Option<usize>,
    pub d_mapping: Option<usize>,
    pub n_layers: Option<usize>,
    pub n_heads: Option<usize>,
    pub fourier_seed: Option<u64>,
}

/// Point counts and pseudo-sequence settings. Unset counts default to 51
/// for sequence models and 101 for the MLP; `k` to 5 and 1 respectively.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollocationConfig {
    pub n_x: Option<usize>,
    pub n_t: Option<usize>,
    pub n_ic: Option<usize>,
    pub n_bc: Option<usize>,
    pub k: Option<usize>,
    pub dt: f64,
}

impl Default for CollocationConfig {
    fn default() -> Self {
        Self {
            n_x: None,
            n_t: None,
            n_ic: None,
            n_bc: None,
            k: None,
            dt: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingOptions {
    /// Iterations between NTK weight refreshes; 0 keeps all weights at 1.
    pub ntk_period: usize,
    pub ntk_cap: usize,
    pub chunk_size: usize,
    pub lbfgs: LbfgsConfig,
}

impl Default for TrainingOptions {
    fn default() -> Self {
        let ntk = NtkConfig::default();
        Self {
            ntk_period: ntk.period,
            ntk_cap: ntk.cap,
            chunk_size: spformer::training::DEFAULT_CHUNK,
            lbfgs: LbfgsConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NsOptions {
    /// Converted wake dataset (CSV with sidecar, or binary).
    pub dataset: Option<PathBuf>,
    pub n_train: usize,
    /// Time of the pressure test slice; defaults to the last dataset time.
    pub test_time: Option<f64>,
}

impl Default for NsOptions {
    fn default() -> Self {
        Self {
            dataset: None,
            n_train: 2500,
            test_time: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub name: Option<String>,
    pub problem: ProblemName,
    pub architecture: Architecture,
    pub seed: u64,
    pub iterations: usize,
    pub model: ModelOverrides,
    pub collocation: CollocationConfig,
    pub training: TrainingOptions,
    pub navier_stokes: NsOptions,
    /// Run directory, relative to the output root unless absolute.
    pub output_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: None,
            problem: ProblemName::Reaction,
            architecture: Architecture::SPformer,
            seed: 0,
            iterations: 1000,
            model: ModelOverrides::default(),
            collocation: CollocationConfig::default(),
            training: TrainingOptions::default(),
            navier_stokes: NsOptions::default(),
            output_dir: None,
        }
    }
}

/// Concrete collocation settings after defaults are applied.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedCollocation {
    pub n_x: usize,
    pub n_t: usize,
    pub n_ic: usize,
    pub n_bc: usize,
    pub k: usize,
    pub dt: f64,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configs serialize")
    }

    pub fn run_name(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| format!("{}-{}-s{}", self.problem, self.architecture, self.seed))
    }

    pub fn model_config(&self) -> ModelConfig {
        let problem = PdeProblem::by_name(self.problem);
        let mut c = ModelConfig::baseline(self.architecture);
        c.d_in = problem.d_in();
        c.d_out = problem.d_out();
        c.seed = self.seed;
        let m = &self.model;
        c.d_emb = m.d_emb.unwrap_or(c.d_emb);
        c.d_hidden = m.d_hidden.unwrap_or(c.d_hidden);
        c.d_ff = m.d_ff.unwrap_or(c.d_ff);
        c.d_mapping = m.d_mapping.unwrap_or(c.d_mapping);
        c.n_layers = m.n_layers.unwrap_or(c.n_layers);
        c.n_heads = m.n_heads.unwrap_or(c.n_heads);
        c.fourier_seed = m.fourier_seed;
        c
    }

    pub fn collocation(&self) -> ResolvedCollocation {
        let mlp = self.architecture == Architecture::Mlp;
        let n = if mlp { 101 } else { 51 };
        let c = &self.collocation;
        ResolvedCollocation {
            n_x: c.n_x.unwrap_or(n),
            n_t: c.n_t.unwrap_or(n),
            n_ic: c.n_ic.unwrap_or(n),
            n_bc: c.n_bc.unwrap_or(n),
            k: c.k.unwrap_or(if mlp { 1 } else { 5 }),
            dt: c.dt,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            iterations: self.iterations,
            ntk: (t.ntk_period > 0).then_some(NtkConfig {
                period: t.ntk_period,
                cap: t.ntk_cap,
            }),
            lbfgs: t.lbfgs.clone(),
            chunk_size: t.chunk_size,
            seed: self.seed,
        }
    }

    /// Rejects configurations that cannot run, before any compute.
    pub fn validate(&self) -> Result<()> {
        self.model_config()
            .validate()
            .map_err(|e| CliError::Usage(format!("model: {e}")))?;
        let c = self.collocation();
        if self.problem == ProblemName::NavierStokes {
            if self.navier_stokes.dataset.is_none() {
                return Err(CliError::Usage("ns2d needs navier_stokes.dataset".into()));
            }
            if self.navier_stokes.n_train == 0 {
                return Err(CliError::Usage("navier_stokes.n_train must be positive".into()));
            }
        } else {
            for (name, n) in [("n_x", c.n_x), ("n_t", c.n_t), ("n_ic", c.n_ic), ("n_bc", c.n_bc)] {
                if n == 0 {
                    return Err(CliError::Usage(format!("collocation.{name} must be positive")));
                }
            }
        }
        if c.k == 0 || !(c.dt > 0.0) || !c.dt.is_finite() {
            return Err(CliError::Usage("collocation.k must be positive and collocation.dt positive".into()));
        }
        if self.training.chunk_size == 0 {
            return Err(CliError::Usage("training.chunk_size must be positive".into()));
        }
        let l = &self.training.lbfgs;
        if l.history == 0 || l.max_line_search == 0 || !(0.0 < l.c1 && l.c1 < l.c2 && l.c2 < 1.0) {
            return Err(CliError::Usage(
                "training.lbfgs needs history > 0, max_line_search > 0 and 0 < c1 < c2 < 1".into(),
            ));
        }
        Ok(())
    }
}

/// A base configuration plus lists of values to try. Keys of `grid` are
/// dotted paths into the run configuration, e.g. `seed` or `model.d_mapping`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub base: toml::Table,
    #[serde(default)]
    pub grid: BTreeMap<String, Vec<toml::Value>>,
}

impl SweepConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: invalid sweep: {e}", path.display())))
    }

    /// Every combination of grid values in key order, the last key varying
    /// fastest. With more than one point, each run is named `<base name>-<index>`.
    pub fn expand(&self) -> Result<Vec<RunConfig>> {
        if self.grid.is_empty() || self.grid.values().any(|v| v.is_empty()) {
            return Err(CliError::Usage("sweep grid is empty".into()));
        }
        let keys: Vec<&String> = self.grid.keys().collect();
        let sizes: Vec<usize> = self.grid.values().map(|v| v.len()).collect();
        let total: usize = sizes.iter().product();
        let base_name = RunConfig::from_toml(&toml::to_string(&self.base).unwrap_or_default())?.run_name();
        let mut out = Vec::with_capacity(total);
        for index in 0..total {
            let mut table = self.base.clone();
            let mut rest = index;
            for (key, size) in keys.iter().zip(&sizes).rev() {
                let value = self.grid[*key][rest % size].clone();
                rest /= size;
                set_path(&mut table, key, value)?;
            }
            let mut config = RunConfig::from_toml(&toml::to_string(&table).unwrap_or_default())?;
            if total > 1 {
                config.name = Some(format!("{base_name}-{index}"));
            }
            config.output_dir = None;
            out.push(config);
        }
        Ok(out)
    }
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = path.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| CliError::Usage(format!("bad sweep key `{path}`")))?;
    let mut node = table;
    for part in parts {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| CliError::Usage(format!("sweep key `{path}`: `{part}` is not a table")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}
