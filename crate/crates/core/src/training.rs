//! Masked AdamW and the sparse training loops.
//!
//! One [`Trainer`] drives every method. Each optimizer step samples a batch
//! `(x0, t, ε)`, takes one AdamW step on the noise-prediction loss and
//! re-applies the mask. Dynamic methods additionally run a prune/regrow
//! cycle after every `interval`-th step.
//!
//! Randomness is keyed by step: step `i` draws its batch from stream
//! `STEP_STREAM + i` and its random regrowth from `GROW_STREAM + i`, so a run
//! resumed from a checkpoint replays exactly the same sequence.

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::diffusion::{diffusion_loss, linear_schedule, NoiseSchedule};
use crate::error::{Error, Result};
use crate::experiments::datasets::Dataset;
use crate::models::{has_conv_layers, Denoiser, DenoiserSpec, ParamGrads, ParamRegistry};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::topology::{
    allocate_er, allocate_erk, grow_gradient, grow_random, regrow_count, sample_mask, top_mag_prune, SparsityMask,
};

pub const INIT_STREAM: u64 = 1;
pub const MASK_STREAM: u64 = 2;
pub const STEP_STREAM: u64 = 1 << 32;
pub const GROW_STREAM: u64 = 2 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Dense,
    Static,
    #[serde(rename = "rigl")]
    RigL,
    #[serde(rename = "magran")]
    MagRan,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Dense => "dense",
            Method::Static => "static",
            Method::RigL => "rigl",
            Method::MagRan => "magran",
        }
    }

    pub fn dynamic(self) -> Option<DynamicMethod> {
        match self {
            Method::RigL => Some(DynamicMethod::RigL),
            Method::MagRan => Some(DynamicMethod::MagRan),
            _ => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Regrowth criterion of a dynamic method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DynamicMethod {
    /// Largest dense-gradient magnitude.
    #[serde(rename = "rigl")]
    RigL,
    /// Uniformly random.
    #[serde(rename = "magran")]
    MagRan,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    /// Optimizer steps between prune/regrow cycles.
    pub interval: usize,
    /// Fraction of each layer's active weights replaced per cycle.
    pub prune_rate: f64,
    pub method: DynamicMethod,
}

impl ExplorationSchedule {
    pub fn new(interval: usize, prune_rate: f64, method: DynamicMethod) -> Result<Self> {
        if interval == 0 {
            return Err(Error::Config("exploration interval must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&prune_rate) {
            return Err(Error::Config(format!("prune rate {prune_rate} outside [0, 1)")));
        }
        Ok(ExplorationSchedule {
            interval,
            prune_rate,
            method,
        })
    }

    pub fn is_due(&self, step: usize) -> bool {
        step > 0 && step.is_multiple_of(self.interval)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            weight_decay: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments of one registry entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m_weight: Vec<f64>,
    pub v_weight: Vec<f64>,
    pub m_bias: Option<Vec<f64>>,
    pub v_bias: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub config: AdamWConfig,
    pub step: u64,
    pub moments: Vec<Moments>,
}

impl OptimizerState {
    pub fn new(config: AdamWConfig, registry: &ParamRegistry) -> Self {
        let moments = registry
            .entries()
            .iter()
            .map(|e| {
                let nb = e.bias.as_ref().map(Tensor::numel);
                Moments {
                    m_weight: vec![0.0; e.weight.numel()],
                    v_weight: vec![0.0; e.weight.numel()],
                    m_bias: nb.map(|n| vec![0.0; n]),
                    v_bias: nb.map(|n| vec![0.0; n]),
                }
            })
            .collect();
        OptimizerState {
            config,
            step: 0,
            moments,
        }
    }

    /// Zeroes both weight moments at `index` of registry entry `entry`.
    pub fn reset_position(&mut self, entry: usize, index: usize) {
        self.moments[entry].m_weight[index] = 0.0;
        self.moments[entry].v_weight[index] = 0.0;
    }
}

fn adamw_update(cfg: &AdamWConfig, step: u64, param: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64]) {
    let bc1 = 1.0 - cfg.beta1.powi(step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(step as i32);
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g;
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        param[i] -= cfg.lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * param[i]);
    }
}

/// One decoupled-weight-decay Adam step over every parameter, followed by
/// zeroing inactive weights and their moments when a mask is given.
pub fn adamw_step(
    registry: &mut ParamRegistry,
    grads: &[(Tensor, Option<Tensor>)],
    state: &mut OptimizerState,
    mask: Option<&SparsityMask>,
) -> Result<()> {
    if grads.len() != registry.len() || state.moments.len() != registry.len() {
        return Err(Error::Dimension(format!(
            "adamw: {} grads and {} moment sets for {} parameters",
            grads.len(),
            state.moments.len(),
            registry.len()
        )));
    }
    state.step += 1;
    let cfg = state.config;
    let step = state.step;
    for ((entry, (gw, gb)), mom) in registry
        .entries_mut()
        .iter_mut()
        .zip(grads)
        .zip(state.moments.iter_mut())
    {
        if gw.numel() != entry.weight.numel() {
            return Err(Error::Dimension(format!(
                "adamw: gradient for `{}` has {} values, weight has {}",
                entry.layer_id,
                gw.numel(),
                entry.weight.numel()
            )));
        }
        adamw_update(
            &cfg,
            step,
            entry.weight.values_mut(),
            gw.values(),
            &mut mom.m_weight,
            &mut mom.v_weight,
        );
        if let (Some(b), Some(gb), Some(mb), Some(vb)) =
            (entry.bias.as_mut(), gb, mom.m_bias.as_mut(), mom.v_bias.as_mut())
        {
            adamw_update(&cfg, step, b.values_mut(), gb.values(), mb, vb);
        }
    }
    if let Some(mask) = mask {
        enforce_mask(registry, state, mask)?;
    }
    Ok(())
}

fn enforce_mask(registry: &mut ParamRegistry, state: &mut OptimizerState, mask: &SparsityMask) -> Result<()> {
    registry.apply_mask(mask)?;
    for (i, m) in registry.maskable_indices().into_iter().zip(mask.layers()) {
        let mom = &mut state.moments[i];
        for (j, &on) in m.bits().iter().enumerate() {
            if !on {
                mom.m_weight[j] = 0.0;
                mom.v_weight[j] = 0.0;
            }
        }
    }
    Ok(())
}

/// Everything a training loop needs, independent of file formats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub method: Method,
    pub sparsity: f64,
    pub exploration: Option<ExplorationSchedule>,
    pub model: DenoiserSpec,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub optimizer: AdamWConfig,
    pub steps: usize,
    pub batch_size: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(Error::InvalidSparsity(self.sparsity));
        }
        if self.method == Method::Dense && self.sparsity != 0.0 {
            return Err(Error::Config("the dense baseline requires sparsity 0".into()));
        }
        match (self.method.dynamic(), &self.exploration) {
            (Some(m), Some(s)) if s.method == m => {
                ExplorationSchedule::new(s.interval, s.prune_rate, s.method)?;
            }
            (Some(_), _) => {
                return Err(Error::Config(format!(
                    "method {} needs a matching exploration schedule",
                    self.method
                )))
            }
            (None, Some(_)) => return Err(Error::Config(format!("method {} does not explore", self.method))),
            (None, None) => {}
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        self.model.validate()
    }

    pub fn noise_schedule(&self) -> Result<NoiseSchedule> {
        linear_schedule(self.beta_start, self.beta_end, self.diffusion_steps)
    }
}

/// Per-layer bookkeeping of one prune/regrow cycle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerExploration {
    pub layer_id: String,
    pub active_before: usize,
    pub pruned: usize,
    pub grown: usize,
    /// Grown positions that were pruned in the same cycle.
    pub regrown_pruned: usize,
    pub active_after: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExplorationEvent {
    pub step: usize,
    pub layers: Vec<LayerExploration>,
    /// Grown positions per layer, for auditing the regrowth criterion.
    #[serde(skip)]
    pub grown_indices: Vec<Vec<usize>>,
}

/// Training history accumulated by a [`Trainer`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Loss of every optimizer step, index 0 = step `start_step + 1`.
    pub step_losses: Vec<f64>,
    pub start_step: usize,
    pub events: Vec<ExplorationEvent>,
    pub initial_mask_digest: Option<String>,
}

/// Batch drawn for one optimizer step.
#[derive(Debug, Clone)]
pub struct Batch {
    pub x0: Tensor,
    pub t: Vec<usize>,
    pub eps: Tensor,
}

pub struct Trainer<'d> {
    config: TrainConfig,
    data: &'d Dataset,
    root: Rng,
    schedule: NoiseSchedule,
    model: Denoiser,
    mask: Option<SparsityMask>,
    optimizer: OptimizerState,
    step: usize,
    log: TrainLog,
}

pub struct TrainOutcome {
    pub model: Denoiser,
    pub mask: Option<SparsityMask>,
    pub optimizer: OptimizerState,
    pub log: TrainLog,
}

impl TrainOutcome {
    /// The effective mask: the dense baseline reports an all-ones mask.
    pub fn effective_mask(&self) -> SparsityMask {
        self.mask
            .clone()
            .unwrap_or_else(|| SparsityMask::dense(&self.model.registry().maskable_geoms()))
    }
}

impl<'d> Trainer<'d> {
    /// Fresh run: initializes the denoiser from `rng`'s init stream and, for
    /// sparse methods, allocates (ER for all-dense nets, ERK otherwise) and
    /// samples the initial mask.
    pub fn new(config: TrainConfig, data: &'d Dataset, rng: &Rng) -> Result<Self> {
        config.validate()?;
        check_data(&config, data)?;
        let schedule = config.noise_schedule()?;
        let mut model = Denoiser::init(config.model.clone(), &mut rng.fork(INIT_STREAM))?;
        let mask_layers = model.registry().maskable_geoms();
        let mask = if config.method == Method::Dense {
            None
        } else {
            let plan = if has_conv_layers(&mask_layers) {
                allocate_erk(&mask_layers, config.sparsity)?
            } else {
                allocate_er(&mask_layers, config.sparsity)?
            };
            let mask = sample_mask(&plan, &mask_layers, &mut rng.fork(MASK_STREAM))?;
            model.registry_mut().apply_mask(&mask)?;
            Some(mask)
        };
        let optimizer = OptimizerState::new(config.optimizer, model.registry());
        let log = TrainLog {
            initial_mask_digest: mask.as_ref().map(SparsityMask::digest),
            ..TrainLog::default()
        };
        Ok(Trainer {
            config,
            data,
            root: rng.clone(),
            schedule,
            model,
            mask,
            optimizer,
            step: 0,
            log,
        })
    }

    /// Continues a run from saved state; the step counter is taken from the
    /// optimizer.
    pub fn resume(
        config: TrainConfig,
        data: &'d Dataset,
        rng: &Rng,
        model: Denoiser,
        mask: Option<SparsityMask>,
        optimizer: OptimizerState,
    ) -> Result<Self> {
        config.validate()?;
        check_data(&config, data)?;
        if model.spec() != &config.model {
            return Err(Error::Config("checkpoint model does not match config".into()));
        }
        if (config.method == Method::Dense) != mask.is_none() {
            return Err(Error::Config("mask presence does not match the training method".into()));
        }
        let schedule = config.noise_schedule()?;
        let step = optimizer.step as usize;
        Ok(Trainer {
            config,
            data,
            root: rng.clone(),
            schedule,
            model,
            mask,
            optimizer,
            step,
            log: TrainLog {
                start_step: step,
                ..TrainLog::default()
            },
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn step_count(&self) -> usize {
        self.step
    }

    pub fn model(&self) -> &Denoiser {
        &self.model
    }

    pub fn mask(&self) -> Option<&SparsityMask> {
        self.mask.as_ref()
    }

    pub fn optimizer(&self) -> &OptimizerState {
        &self.optimizer
    }

    pub fn log(&self) -> &TrainLog {
        &self.log
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    /// The batch optimizer step `step` (1-based) trains on.
    pub fn batch_for_step(&self, step: usize) -> Result<Batch> {
        let mut r = self.root.fork(STEP_STREAM + step as u64);
        let n = self.data.len();
        let bs = self.config.batch_size;
        let row = self.data.sample_len();
        let mut x0 = Vec::with_capacity(bs * row);
        for _ in 0..bs {
            x0.extend_from_slice(self.data.sample(r.below(n)));
        }
        let t = (0..bs).map(|_| 1 + r.below(self.schedule.steps())).collect();
        let mut shape = vec![bs];
        shape.extend_from_slice(self.data.sample_shape());
        let eps = Tensor::gaussian(&mut r, &shape);
        Ok(Batch {
            x0: Tensor::new(shape, x0)?,
            t,
            eps,
        })
    }

    /// Loss and full (dense) parameter gradients on `batch` at the current
    /// weights.
    pub fn loss_and_grads(&self, batch: &Batch) -> Result<(f64, ParamGrads)> {
        let mut g = Graph::new();
        let params = self.model.bind(&mut g);
        let loss = diffusion_loss(
            &self.model.with_params(&params),
            &mut g,
            &batch.x0,
            &batch.t,
            &batch.eps,
            &self.schedule,
        )?;
        g.backward(loss)?;
        Ok((g.value(loss).item(), params.grads(&g)))
    }

    /// One optimizer step, plus an exploration cycle when due. Returns the
    /// pre-update loss.
    pub fn step(&mut self) -> Result<f64> {
        let step = self.step + 1;
        let batch = self.batch_for_step(step)?;
        let (loss, grads) = self.loss_and_grads(&batch)?;
        adamw_step(
            self.model.registry_mut(),
            &grads,
            &mut self.optimizer,
            self.mask.as_ref(),
        )?;
        self.step = step;
        self.log.step_losses.push(loss);
        if let Some(schedule) = self.config.exploration {
            if schedule.is_due(step) {
                self.explore(step, &schedule, &batch)?;
            }
        }
        Ok(loss)
    }

    pub fn run(&mut self) -> Result<()> {
        while self.step < self.config.steps {
            self.step()?;
        }
        Ok(())
    }

    pub fn run_until(&mut self, step: usize) -> Result<()> {
        while self.step < step.min(self.config.steps) {
            self.step()?;
        }
        Ok(())
    }

    fn explore(&mut self, step: usize, schedule: &ExplorationSchedule, batch: &Batch) -> Result<()> {
        let mask = self.mask.clone().expect("dynamic methods always carry a mask");
        let pruned = top_mag_prune(&self.model.registry().maskable_weights(), &mask, schedule.prune_rate)?;
        let counts: Vec<usize> = mask
            .active_counts()
            .into_iter()
            .map(|a| regrow_count(a, schedule.prune_rate))
            .collect();
        let grown = match schedule.method {
            DynamicMethod::RigL => {
                // Dense gradient of the current batch at the post-update weights.
                let (_, grads) = self.loss_and_grads(batch)?;
                let mask_idx = self.model.registry().maskable_indices();
                let dense: Vec<&Tensor> = mask_idx.iter().map(|&i| &grads[i].0).collect();
                grow_gradient(&dense, &pruned, &counts)?
            }
            DynamicMethod::MagRan => {
                let mut r = self.root.fork(GROW_STREAM + step as u64);
                grow_random(&pruned, &counts, &mut r)?
            }
        };

        let mut layers = Vec::with_capacity(mask.layers().len());
        let mut grown_indices = Vec::with_capacity(mask.layers().len());
        let mask_idx = self.model.registry().maskable_indices();
        for (k, &entry) in mask_idx.iter().enumerate() {
            let (before, after_prune, after) = (mask.layer(k), pruned.layer(k), grown.layer(k));
            let mut new_positions = Vec::new();
            let mut regrown_pruned = 0;
            for j in 0..before.len() {
                if after.is_active(j) && !after_prune.is_active(j) {
                    new_positions.push(j);
                    if before.is_active(j) {
                        regrown_pruned += 1;
                    }
                }
            }
            let weight = self.model.registry_mut().entries_mut()[entry].weight.values_mut();
            for &j in &new_positions {
                weight[j] = 0.0;
                self.optimizer.reset_position(entry, j);
            }
            layers.push(LayerExploration {
                layer_id: before.layer_id().to_string(),
                active_before: before.active(),
                pruned: before.active() - after_prune.active(),
                grown: new_positions.len(),
                regrown_pruned,
                active_after: after.active(),
            });
            grown_indices.push(new_positions);
        }
        enforce_mask(self.model.registry_mut(), &mut self.optimizer, &grown)?;
        self.mask = Some(grown);
        self.log.events.push(ExplorationEvent {
            step,
            layers,
            grown_indices,
        });
        Ok(())
    }

    pub fn finish(self) -> TrainOutcome {
        TrainOutcome {
            model: self.model,
            mask: self.mask,
            optimizer: self.optimizer,
            log: self.log,
        }
    }
}

fn check_data(config: &TrainConfig, data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    if data.sample_shape() != config.model.sample_shape().as_slice() {
        return Err(Error::Config(format!(
            "dataset samples have shape {:?}, model expects {:?}",
            data.sample_shape(),
            config.model.sample_shape()
        )));
    }
    Ok(())
}

fn train_with(config: &TrainConfig, data: &Dataset, rng: &Rng) -> Result<TrainOutcome> {
    let mut trainer = Trainer::new(config.clone(), data, rng)?;
    trainer.run()?;
    Ok(trainer.finish())
}

/// Static sparse training: one mask sampled at initialization, never changed.
pub fn train_static(config: &TrainConfig, data: &Dataset, rng: &Rng) -> Result<TrainOutcome> {
    if config.method != Method::Static {
        return Err(Error::Config(format!("train_static given method {}", config.method)));
    }
    train_with(config, data, rng)
}

/// Dynamic sparse training (RigL or MagRan regrowth).
pub fn train_dynamic(config: &TrainConfig, data: &Dataset, rng: &Rng) -> Result<TrainOutcome> {
    if config.method.dynamic().is_none() {
        return Err(Error::Config(format!("train_dynamic given method {}", config.method)));
    }
    train_with(config, data, rng)
}

/// Dense baseline: no mask at all.
pub fn train_dense(config: &TrainConfig, data: &Dataset, rng: &Rng) -> Result<TrainOutcome> {
    if config.method != Method::Dense {
        return Err(Error::Config(format!("train_dense given method {}", config.method)));
    }
    train_with(config, data, rng)
}

/// Dispatches on `config.method`.
pub fn train(config: &TrainConfig, data: &Dataset, rng: &Rng) -> Result<TrainOutcome> {
    train_with(config, data, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::ParamEntry;
    use crate::topology::{LayerGeom, LayerMask};

    fn scalar_registry(w: f64) -> ParamRegistry {
        ParamRegistry::new(vec![ParamEntry {
            layer_id: "w".into(),
            geom: LayerGeom::dense("w", 1, 1),
            weight: Tensor::new(vec![1, 1], vec![w]).unwrap(),
            bias: None,
            maskable: true,
        }])
        .unwrap()
    }

    fn grad(v: f64) -> ParamGrads {
        vec![(Tensor::new(vec![1, 1], vec![v]).unwrap(), None)]
    }

    #[test]
    fn zero_grad_no_decay_is_noop() {
        let mut reg = scalar_registry(0.7);
        let cfg = AdamWConfig {
            weight_decay: 0.0,
            ..AdamWConfig::default()
        };
        let mut st = OptimizerState::new(cfg, &reg);
        adamw_step(&mut reg, &grad(0.0), &mut st, None).unwrap();
        assert_eq!(reg.entries()[0].weight.values(), &[0.7]);
    }

    #[test]
    fn masked_position_stays_zero() {
        let mut reg = scalar_registry(0.0);
        let mask = SparsityMask::new(vec![LayerMask::new("w", vec![false])]);
        let mut st = OptimizerState::new(AdamWConfig::default(), &reg);
        adamw_step(&mut reg, &grad(5.0), &mut st, Some(&mask)).unwrap();
        assert_eq!(reg.entries()[0].weight.values(), &[0.0]);
        assert_eq!(st.moments[0].m_weight, vec![0.0]);
        assert_eq!(st.moments[0].v_weight, vec![0.0]);
    }

    #[test]
    fn two_hand_computed_steps() {
        // lr 0.1, β1 0.9, β2 0.999, ε 1e-8, wd 0.01; θ0 = 1, g1 = 0.5, g2 = -0.2
        let cfg = AdamWConfig {
            lr: 0.1,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        };
        let mut reg = scalar_registry(1.0);
        let mut st = OptimizerState::new(cfg, &reg);
        adamw_step(&mut reg, &grad(0.5), &mut st, None).unwrap();
        // m1 = 0.05, v1 = 0.00025; m̂ = 0.5, v̂ = 0.25 → step 0.5/(0.5+1e-8)
        let theta1 = 1.0 - 0.1 * (0.5 / (0.5 + 1e-8) + 0.01 * 1.0);
        assert!((reg.entries()[0].weight.values()[0] - theta1).abs() < 1e-15);
        adamw_step(&mut reg, &grad(-0.2), &mut st, None).unwrap();
        let m2: f64 = 0.9 * 0.05 + 0.1 * -0.2;
        let v2: f64 = 0.999 * 0.00025 + 0.001 * 0.04;
        let m_hat = m2 / (1.0 - 0.81);
        let v_hat = v2 / (1.0 - 0.998001);
        let theta2 = theta1 - 0.1 * (m_hat / (v_hat.sqrt() + 1e-8) + 0.01 * theta1);
        assert!((reg.entries()[0].weight.values()[0] - theta2).abs() < 1e-14);
    }

    #[test]
    fn schedule_validation() {
        assert!(ExplorationSchedule::new(0, 0.5, DynamicMethod::RigL).is_err());
        assert!(ExplorationSchedule::new(10, 1.0, DynamicMethod::RigL).is_err());
        let s = ExplorationSchedule::new(10, 0.5, DynamicMethod::MagRan).unwrap();
        assert!(!s.is_due(0) && !s.is_due(5) && s.is_due(10) && s.is_due(20));
    }
}
