//! Flat JSON experiment configuration.
//!
//! Every key is optional; missing keys take the defaults of
//! [`ExperimentConfig::default`]. Unknown keys are rejected by name.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::experiments::datasets::DatasetKind;
use crate::models::{Activation, DenoiserSpec};
use crate::training::{AdamWConfig, ExplorationSchedule, Method, TrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Conv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub method: Method,
    pub sparsity: f64,
    pub prune_rate: f64,
    /// Optimizer steps between prune/regrow cycles.
    pub exploration_interval: usize,

    pub model: ModelKind,
    /// MLP hidden widths.
    pub hidden: Vec<usize>,
    /// Conv hidden channel counts.
    pub hidden_channels: Vec<usize>,
    pub kernel: usize,
    pub activation: Activation,
    pub time_dim: usize,

    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,

    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,

    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,

    pub dataset: DatasetKind,
    pub dataset_size: usize,

    pub ddim_steps: usize,
    pub eta: f64,
    pub eval_samples: usize,
    pub kid_block_size: usize,
    /// Optimizer steps per reported loss interval.
    pub log_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let opt = AdamWConfig::default();
        ExperimentConfig {
            method: Method::Dense,
            sparsity: 0.0,
            prune_rate: 0.5,
            exploration_interval: 100,
            model: ModelKind::Mlp,
            hidden: vec![128, 128, 128],
            hidden_channels: vec![8, 8, 8],
            kernel: 3,
            activation: Activation::Silu,
            time_dim: 16,
            diffusion_steps: 1000,
            beta_start: 1e-4,
            beta_end: 2e-2,
            lr: opt.lr,
            weight_decay: opt.weight_decay,
            beta1: opt.beta1,
            beta2: opt.beta2,
            adam_eps: opt.eps,
            steps: 5000,
            batch_size: 128,
            seed: 0,
            dataset: DatasetKind::Gauss8,
            dataset_size: 10_000,
            ddim_steps: 50,
            eta: 0.0,
            eval_samples: 2000,
            kid_block_size: 500,
            log_every: 100,
        }
    }
}

impl ExperimentConfig {
    /// Keys accepted in a config document.
    pub fn known_keys() -> BTreeSet<String> {
        match serde_json::to_value(ExperimentConfig::default()) {
            Ok(Value::Object(map)) => map.keys().cloned().collect(),
            _ => unreachable!("config serializes to an object"),
        }
    }

    /// Parses a JSON object, rejecting unknown keys by name, then validates.
    pub fn from_value(value: Value) -> Result<Self> {
        let Value::Object(map) = &value else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let known = Self::known_keys();
        if let Some(key) = map.keys().find(|k| !known.contains(*k)) {
            return Err(Error::UnknownKey(key.clone()));
        }
        let config: ExperimentConfig = serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(Error::InvalidSparsity(self.sparsity));
        }
        if !(0.0..1.0).contains(&self.prune_rate) {
            return Err(Error::Config(format!("prune_rate {} outside [0, 1)", self.prune_rate)));
        }
        if self.exploration_interval == 0 {
            return Err(Error::Config("exploration_interval must be positive".into()));
        }
        if self.ddim_steps == 0 || self.ddim_steps > self.diffusion_steps {
            return Err(Error::Config(format!(
                "ddim_steps {} must lie in 1..={}",
                self.ddim_steps, self.diffusion_steps
            )));
        }
        if !(0.0..=1.0).contains(&self.eta) {
            return Err(Error::Config(format!("eta {} outside [0, 1]", self.eta)));
        }
        if self.dataset_size == 0 {
            return Err(Error::Config("dataset_size must be positive".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be positive".into()));
        }
        if self.kid_block_size < 2 {
            return Err(Error::Config("kid_block_size must be at least 2".into()));
        }
        let dim: usize = self.dataset.sample_shape().iter().product();
        if self.eval_samples < dim + 1 {
            return Err(Error::Config(format!(
                "eval_samples must exceed the sample dimension {dim}"
            )));
        }
        match (self.model, self.dataset.is_image()) {
            (ModelKind::Mlp, true) => {
                return Err(Error::Config(format!(
                    "dataset {} needs the conv model",
                    self.dataset.name()
                )))
            }
            (ModelKind::Conv, false) => {
                return Err(Error::Config(format!(
                    "dataset {} needs the mlp model",
                    self.dataset.name()
                )))
            }
            _ => {}
        }
        self.train_config().validate()
    }

    pub fn denoiser_spec(&self) -> DenoiserSpec {
        let shape = self.dataset.sample_shape();
        match self.model {
            ModelKind::Mlp => DenoiserSpec::Mlp {
                data_dim: shape.iter().product(),
                hidden: self.hidden.clone(),
                activation: self.activation,
                time_dim: self.time_dim,
            },
            ModelKind::Conv => DenoiserSpec::Conv {
                channels: shape[0],
                height: shape[1],
                width: shape[2],
                hidden_channels: self.hidden_channels.clone(),
                kernel: self.kernel,
                activation: self.activation,
                time_dim: self.time_dim,
            },
        }
    }

    pub fn exploration(&self) -> Option<ExplorationSchedule> {
        self.method.dynamic().map(|method| ExplorationSchedule {
            interval: self.exploration_interval,
            prune_rate: self.prune_rate,
            method,
        })
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            method: self.method,
            sparsity: self.sparsity,
            exploration: self.exploration(),
            model: self.denoiser_spec(),
            diffusion_steps: self.diffusion_steps,
            beta_start: self.beta_start,
            beta_end: self.beta_end,
            optimizer: self.optimizer(),
            steps: self.steps,
            batch_size: self.batch_size,
        }
    }

    /// Output directory name; distinct for every method/S/p/seed combination.
    pub fn run_name(&self) -> String {
        format!(
            "{}_S{}_p{}_seed{}",
            self.method, self.sparsity, self.prune_rate, self.seed
        )
    }
}

fn read_json(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    ExperimentConfig::from_value(read_json(path.as_ref())?)
}

/// Cross-product of run settings over a shared base config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub base: ExperimentConfig,
    pub methods: Vec<Method>,
    pub sparsities: Vec<f64>,
    pub prune_rates: Vec<f64>,
    pub seeds: Vec<u64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            base: ExperimentConfig::default(),
            methods: vec![Method::Dense, Method::Static, Method::RigL, Method::MagRan],
            sparsities: vec![0.1, 0.25, 0.5, 0.75, 0.9],
            prune_rates: vec![0.5, 0.05],
            seeds: vec![0, 1, 2],
        }
    }
}

impl SweepGrid {
    pub fn from_value(value: Value) -> Result<Self> {
        let Value::Object(mut map) = value else {
            return Err(Error::Config("grid must be a JSON object".into()));
        };
        const KEYS: [&str; 5] = ["base", "methods", "sparsities", "prune_rates", "seeds"];
        if let Some(key) = map.keys().find(|k| !KEYS.contains(&k.as_str())) {
            return Err(Error::UnknownKey(key.clone()));
        }
        let base = match map.remove("base") {
            Some(v) => ExperimentConfig::from_value(v)?,
            None => ExperimentConfig::default(),
        };
        map.insert("base".into(), serde_json::to_value(&base)?);
        let grid: SweepGrid = serde_json::from_value(Value::Object(map)).map_err(|e| Error::Config(e.to_string()))?;
        grid.expand()?;
        Ok(grid)
    }

    /// One config per distinct run. The dense baseline ignores S and p,
    /// static training ignores p, so those axes are collapsed for them.
    pub fn expand(&self) -> Result<Vec<ExperimentConfig>> {
        if self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("grid needs at least one method and one seed".into()));
        }
        let mut out = Vec::new();
        for &method in &self.methods {
            let (sparsities, prune_rates): (Vec<f64>, Vec<f64>) = match method {
                Method::Dense => (vec![0.0], vec![self.base.prune_rate]),
                Method::Static => (self.sparsities.clone(), vec![self.base.prune_rate]),
                Method::RigL | Method::MagRan => (self.sparsities.clone(), self.prune_rates.clone()),
            };
            if sparsities.is_empty() || prune_rates.is_empty() {
                return Err(Error::Config(format!("grid has no settings for {method}")));
            }
            for &s in &sparsities {
                for &p in &prune_rates {
                    for &seed in &self.seeds {
                        let config = ExperimentConfig {
                            method,
                            sparsity: s,
                            prune_rate: p,
                            seed,
                            ..self.base.clone()
                        };
                        config.validate()?;
                        out.push(config);
                    }
                }
            }
        }
        let mut names = BTreeSet::new();
        for c in &out {
            if !names.insert(c.run_name()) {
                return Err(Error::Config(format!("grid repeats run {}", c.run_name())));
            }
        }
        Ok(out)
    }
}

pub fn load_grid(path: impl AsRef<Path>) -> Result<SweepGrid> {
    SweepGrid::from_value(read_json(path.as_ref())?)
}
