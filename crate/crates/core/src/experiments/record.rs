//! Run records and the files emitted for each run.
//!
//! A run directory holds:
//!
//! * `run.json`: the full [`RunRecord`].
//! * `losses.csv`: `step,loss`, one row per logging interval. `step` is the
//!   last step of the interval and `loss` the mean over it.
//! * `events.csv`: `step,layer_id,active_before,pruned,grown,regrown_pruned,active_after`.
//! * `samples.bin`: generated samples in data coordinates, as a [`SampleSet`].

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::checkpoint::Reader;
use crate::experiments::config::ExperimentConfig;
use crate::metrics::{FlopsReport, ParamsReport, QualityReport};
use crate::training::{ExplorationEvent, LayerExploration};

pub const SAMPLES_MAGIC: [u8; 4] = *b"SDMS";
pub const SAMPLES_VERSION: u16 = 1;

/// Flat sample tensor with a small self-describing header:
///
/// ```text
/// "SDMS"  u16 version  u16 rank  rank × u64 extents  numel × f64 values
/// ```
///
/// Little-endian throughout; the first extent is the sample count.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

impl SampleSet {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.iter().product::<usize>() != values.len() {
            return Err(Error::Dimension(format!(
                "sample shape {shape:?} does not hold {} values",
                values.len()
            )));
        }
        Ok(SampleSet { shape, values })
    }

    pub fn len(&self) -> usize {
        self.shape[0]
    }

    pub fn is_empty(&self) -> bool {
        self.shape[0] == 0
    }

    /// Values per sample.
    pub fn dim(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * (self.shape.len() + self.values.len()));
        out.extend_from_slice(&SAMPLES_MAGIC);
        out.extend_from_slice(&SAMPLES_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.shape.len() as u16).to_le_bytes());
        for &d in &self.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let magic: [u8; 4] = r.take(4, "magic")?.try_into().unwrap();
        if magic != SAMPLES_MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let version = r.u16("version")?;
        if version != SAMPLES_VERSION {
            return Err(Error::Version {
                found: version,
                expected: SAMPLES_VERSION,
            });
        }
        let rank = r.u16("rank")? as usize;
        let shape = (0..rank).map(|_| r.u64("extent")).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or_else(|| Error::Malformed("sample extents overflow".into()))?;
        let values = r.f64s(numel, "sample values")?;
        r.finish()?;
        SampleSet::new(shape, values).map_err(|e| Error::Malformed(e.to_string()))
    }

    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingFile(path.to_path_buf())
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntervalLoss {
    pub step: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub step: usize,
    pub layers: Vec<LayerExploration>,
}

impl From<&ExplorationEvent> for EventRecord {
    fn from(e: &ExplorationEvent) -> Self {
        EventRecord {
            step: e.step,
            layers: e.layers.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDensity {
    pub layer_id: String,
    pub params: usize,
    pub active: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WallClock {
    pub train_secs: f64,
    pub sample_secs: f64,
    pub eval_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactHashes {
    pub initial_mask: Option<String>,
    pub final_mask: String,
    pub weights: String,
    pub samples: String,
}

/// Fixed conventions of this implementation, echoed so runs are self-describing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conventions {
    pub exploration_unit: String,
    pub masked_parameters: String,
    pub regrowth_gradient: String,
    pub sampler_clipping: String,
    pub quality_feature_space: String,
    pub flops_accounting: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Conventions {
            exploration_unit: "optimizer steps".into(),
            masked_parameters: "weight matrices and conv kernels; biases and time projection stay dense"
                .into(),
            regrowth_gradient: "dense gradient on the current batch after the optimizer step".into(),
            sampler_clipping: "none".into(),
            quality_feature_space: "raw data coordinates".into(),
            flops_accounting: "2 per active weight per output position; training step = 3 forward passes; RigL adds 2 dense forward passes per exploration"
                .into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub name: String,
    pub config: ExperimentConfig,
    pub conventions: Conventions,
    pub losses: Vec<IntervalLoss>,
    pub events: Vec<EventRecord>,
    pub layers: Vec<LayerDensity>,
    pub achieved_sparsity: f64,
    /// Absent when sampling produced non-finite values.
    pub quality: Option<QualityReport>,
    pub flops: FlopsReport,
    pub params: ParamsReport,
    pub wall_clock: WallClock,
    pub hashes: ArtifactHashes,
    pub notes: Vec<String>,
}

impl RunRecord {
    /// The record with timing zeroed, for determinism comparisons.
    pub fn without_wall_clock(&self) -> Self {
        RunRecord {
            wall_clock: WallClock::default(),
            ..self.clone()
        }
    }

    pub fn frechet(&self) -> Option<f64> {
        self.quality.as_ref().map(|q| q.frechet)
    }
}

/// Means of consecutive `every`-step windows; a shorter tail forms its own interval.
pub fn interval_losses(step_losses: &[f64], start_step: usize, every: usize) -> Vec<IntervalLoss> {
    step_losses
        .chunks(every.max(1))
        .enumerate()
        .map(|(k, chunk)| IntervalLoss {
            step: start_step + k * every.max(1) + chunk.len(),
            loss: chunk.iter().sum::<f64>() / chunk.len() as f64,
        })
        .collect()
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn losses_csv(record: &RunRecord) -> String {
    let mut s = String::from("step,loss\n");
    for l in &record.losses {
        let _ = writeln!(s, "{},{}", l.step, l.loss);
    }
    s
}

pub fn events_csv(record: &RunRecord) -> String {
    let mut s = String::from("step,layer_id,active_before,pruned,grown,regrown_pruned,active_after\n");
    for e in &record.events {
        for l in &e.layers {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                e.step, l.layer_id, l.active_before, l.pruned, l.grown, l.regrown_pruned, l.active_after
            );
        }
    }
    s
}

/// Writes `run.json`, `losses.csv`, `events.csv` and, when given, `samples.bin`.
pub fn emit_metrics(record: &RunRecord, samples: Option<&SampleSet>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join("run.json"), serde_json::to_vec_pretty(record)?)?;
    write(&dir.join("losses.csv"), losses_csv(record))?;
    write(&dir.join("events.csv"), events_csv(record))?;
    if let Some(s) = samples {
        s.save(dir.join("samples.bin"))?;
    }
    Ok(())
}

pub fn load_record(path: impl AsRef<Path>) -> Result<RunRecord> {
    let path = path.as_ref();
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
