//! Experiment orchestration: configs, datasets, checkpoints, run records
//! and sweeps.

pub mod checkpoint;
pub mod config;
pub mod datasets;
pub mod record;
pub mod run;
pub mod sweep;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{load_config, load_grid, ExperimentConfig, ModelKind, SweepGrid};
pub use datasets::{make_dataset, Dataset, DatasetKind};
pub use record::{emit_metrics, RunRecord, SampleSet};
pub use run::{resume_experiment, run_experiment, RunArtifacts};
pub use sweep::{report, run_sweep};
