use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use slimnn::bias::{BiasMode, BiasModel, ValueSet};
use slimnn::tasks::{Tail, TaskFile, TaskSpec};
use slimnn::topology::CostMetric;
use slimnn::{SlimTopology, WeightAssignment};

/// Run configuration. Relative paths are taken from the config file's directory.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub topology: Option<PathBuf>,
    pub metric: CostMetric,
    /// Program file with the weights to run, or the starting weights of `adapt`.
    pub weights: Option<PathBuf>,
    /// Task file (suite and/or explicit tasks).
    pub tasks: Option<PathBuf>,
    /// Same as `tasks`, inline.
    pub task_set: Option<TaskFile>,
    /// Restricts `search` to one task.
    pub task: Option<u32>,
    /// `run` only: a single episode fed with these input rows instead of tasks.
    pub inputs: Option<Vec<Vec<f64>>>,
    pub tail: Tail,
    /// "uniform" or a bias snapshot path.
    pub bias: Option<String>,
    pub values: Option<Vec<f64>>,
    pub mode: BiasMode,
    pub eta: Option<f64>,
    pub max_phase: Option<u32>,
    /// Time limit for `run` and for registry re-evaluations in `adapt`.
    pub t_lim: Option<f64>,
    pub seed: Option<u64>,
    pub bias_out: Option<PathBuf>,
    pub registry_out: Option<PathBuf>,
    pub bench: BenchConfig,
}

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub sizes: Vec<usize>,
    pub chain: usize,
    pub t_lim: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { sizes: vec![1_000, 10_000], chain: 10, t_lim: 1e9 }
    }
}

pub const DEFAULT_T_LIM: f64 = 1e4;
pub const DEFAULT_MAX_PHASE: u32 = 20;
pub const DEFAULT_ETA: f64 = 0.5;

pub struct Loaded {
    pub config: RunConfig,
    pub dir: PathBuf,
}

impl Loaded {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig = toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Loaded { config, dir })
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }

    pub fn topology(&self) -> Result<SlimTopology> {
        let Some(p) = &self.config.topology else { bail!("config has no `topology`") };
        let p = self.path(p);
        SlimTopology::load(&p, self.config.metric).with_context(|| format!("loading topology {}", p.display()))
    }

    pub fn weights(&self, topo: &SlimTopology) -> Result<WeightAssignment> {
        match &self.config.weights {
            None => Ok(WeightAssignment::new()),
            Some(p) => {
                let p = self.path(p);
                WeightAssignment::load(&p, topo).with_context(|| format!("loading weights {}", p.display()))
            }
        }
    }

    pub fn tasks(&self, topo: &SlimTopology, seed: Option<u64>) -> Result<Vec<TaskSpec>> {
        let mut file = match (&self.config.tasks, &self.config.task_set) {
            (Some(_), Some(_)) => bail!("config sets both `tasks` and `task_set`"),
            (Some(p), None) => {
                let p = self.path(p);
                TaskFile::load(&p).with_context(|| format!("loading tasks {}", p.display()))?
            }
            (None, Some(f)) => f.clone(),
            (None, None) => TaskFile::default(),
        };
        if let Some(s) = seed {
            file.seed = s;
        }
        let tasks = file.resolve()?;
        for t in &tasks {
            t.check(topo)?;
        }
        Ok(tasks)
    }

    pub fn bias(&self, topo: &SlimTopology) -> Result<BiasModel> {
        let eta = self.config.eta.unwrap_or(DEFAULT_ETA);
        match self.config.bias.as_deref() {
            None | Some("uniform") => {
                let values = match &self.config.values {
                    Some(v) => ValueSet::new(v.clone())?,
                    None => ValueSet::default(),
                };
                Ok(BiasModel::uniform(topo, values, self.config.mode, eta)?)
            }
            Some(p) => {
                let p = self.path(Path::new(p));
                let mut b = BiasModel::load(topo, &p).with_context(|| format!("loading bias {}", p.display()))?;
                if self.config.eta.is_some() {
                    b.set_eta(eta)?;
                }
                Ok(b)
            }
        }
    }

    pub fn t_lim(&self) -> f64 {
        self.config.t_lim.unwrap_or(DEFAULT_T_LIM)
    }

    pub fn max_phase(&self) -> u32 {
        self.config.max_phase.unwrap_or(DEFAULT_MAX_PHASE)
    }
}
