//! Single-run orchestration: data, training, sampling, evaluation.

use std::time::Instant;

use crate::diffusion::ddim_sample;
use crate::error::{Error, Result};
use crate::experiments::checkpoint::{weights_digest, Checkpoint};
use crate::experiments::config::ExperimentConfig;
use crate::experiments::datasets::{generate_raw, make_dataset, Dataset, Standardization};
use crate::experiments::record::{
    interval_losses, ArtifactHashes, Conventions, EventRecord, LayerDensity, RunRecord, SampleSet, WallClock,
};
use crate::metrics::{params_report, quality_report, train_flops};
use crate::models::Denoiser;
use crate::rng::Rng;
use crate::topology::global_sparsity;
use crate::training::{TrainOutcome, Trainer};

pub const DATA_STREAM: u64 = 10;
pub const REFERENCE_STREAM: u64 = 11;
pub const SAMPLE_STREAM: u64 = 12;

pub struct RunArtifacts {
    pub record: RunRecord,
    pub samples: SampleSet,
    pub checkpoint: Checkpoint,
}

pub fn build_dataset(config: &ExperimentConfig) -> Result<Dataset> {
    let mut rng = Rng::new(config.seed).fork(DATA_STREAM);
    make_dataset(config.dataset, config.dataset_size, &mut rng)
}

/// Fresh draws from the data distribution, independent of the training set.
pub fn reference_samples(config: &ExperimentConfig, n: usize) -> Result<SampleSet> {
    let mut rng = Rng::new(config.seed).fork(REFERENCE_STREAM);
    let mut shape = vec![n];
    shape.extend(config.dataset.sample_shape());
    SampleSet::new(shape, generate_raw(config.dataset, n, &mut rng))
}

/// DDIM samples mapped back to data coordinates.
pub fn generate_samples(
    model: &Denoiser,
    standardization: &Standardization,
    config: &ExperimentConfig,
    n: usize,
    steps: usize,
    eta: f64,
    rng: &mut Rng,
) -> Result<SampleSet> {
    if n == 0 {
        return Err(Error::Config("sample count must be positive".into()));
    }
    let schedule = config.train_config().noise_schedule()?;
    let mut shape = vec![n];
    shape.extend(model.spec().sample_shape());
    let z = ddim_sample(model, &schedule, steps, eta, rng, &shape)?;
    SampleSet::new(shape, standardization.invert(z.values()))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RunArtifacts> {
    config.validate()?;
    let data = build_dataset(config)?;
    let started = Instant::now();
    let mut trainer = Trainer::new(config.train_config(), &data, &Rng::new(config.seed))?;
    trainer.run()?;
    let outcome = trainer.finish();
    finish_run(config, &data, outcome, started.elapsed().as_secs_f64())
}

/// Rebuilds the trainer state held by a checkpoint.
pub fn resume_trainer<'d>(checkpoint: &Checkpoint, data: &'d Dataset) -> Result<Trainer<'d>> {
    if data.standardization() != &checkpoint.standardization {
        return Err(Error::Config(
            "dataset standardization differs from the checkpoint".into(),
        ));
    }
    Trainer::resume(
        checkpoint.config.train_config(),
        data,
        &Rng::new(checkpoint.config.seed),
        checkpoint.model.clone(),
        checkpoint.mask.clone(),
        checkpoint.optimizer.clone(),
    )
}

/// Continues a checkpointed run to its configured step count, then evaluates.
pub fn resume_experiment(checkpoint: &Checkpoint) -> Result<RunArtifacts> {
    let config = &checkpoint.config;
    let data = build_dataset(config)?;
    let started = Instant::now();
    let mut trainer = resume_trainer(checkpoint, &data)?;
    trainer.run()?;
    let outcome = trainer.finish();
    finish_run(config, &data, outcome, started.elapsed().as_secs_f64())
}

pub fn checkpoint_of(config: &ExperimentConfig, data: &Dataset, outcome: &TrainOutcome) -> Checkpoint {
    Checkpoint {
        config: config.clone(),
        standardization: data.standardization().clone(),
        model: outcome.model.clone(),
        mask: outcome.mask.clone(),
        optimizer: outcome.optimizer.clone(),
    }
}

fn finish_run(
    config: &ExperimentConfig,
    data: &Dataset,
    outcome: TrainOutcome,
    train_secs: f64,
) -> Result<RunArtifacts> {
    let mut notes = Vec::new();
    let started = Instant::now();
    let mut rng = Rng::new(config.seed).fork(SAMPLE_STREAM);
    let samples = generate_samples(
        &outcome.model,
        data.standardization(),
        config,
        config.eval_samples,
        config.ddim_steps,
        config.eta,
        &mut rng,
    )?;
    let sample_secs = started.elapsed().as_secs_f64();

    let started = Instant::now();
    let reference = reference_samples(config, config.eval_samples)?;
    let quality = if samples.values.iter().all(|v| v.is_finite()) {
        let q = quality_report(&samples.values, &reference.values, samples.dim(), config.kid_block_size)?;
        if q.jitter_applied {
            notes.push("covariance jitter applied in the Fréchet distance".into());
        }
        Some(q)
    } else {
        notes.push("generated samples contain non-finite values; quality not computed".into());
        None
    };
    let eval_secs = started.elapsed().as_secs_f64();

    let registry = outcome.model.registry();
    let mask = outcome.effective_mask();
    let geoms = registry.maskable_geoms();
    let exploration = config.exploration();
    let flops = train_flops(
        registry,
        &mask,
        config.steps,
        config.batch_size,
        exploration.as_ref(),
        config.ddim_steps,
    )?;
    let layers = geoms
        .iter()
        .zip(mask.layers())
        .map(|(g, m)| LayerDensity {
            layer_id: g.layer_id.clone(),
            params: g.param_count(),
            active: m.active(),
        })
        .collect();
    let record = RunRecord {
        name: config.run_name(),
        config: config.clone(),
        conventions: Conventions::default(),
        losses: interval_losses(&outcome.log.step_losses, outcome.log.start_step, config.log_every),
        events: outcome.log.events.iter().map(EventRecord::from).collect(),
        layers,
        achieved_sparsity: global_sparsity(&mask, &geoms),
        quality,
        flops,
        params: params_report(registry, &mask)?,
        wall_clock: WallClock {
            train_secs,
            sample_secs,
            eval_secs,
        },
        hashes: ArtifactHashes {
            initial_mask: outcome.log.initial_mask_digest.clone(),
            final_mask: mask.digest(),
            weights: weights_digest(registry),
            samples: samples.digest(),
        },
        notes,
    };
    let checkpoint = checkpoint_of(config, data, &outcome);
    Ok(RunArtifacts {
        record,
        samples,
        checkpoint,
    })
}
