//! Built-in synthetic datasets.

use std::f64::consts::PI;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetKind {
    /// Eight isotropic Gaussians evenly spaced on a ring.
    #[serde(rename = "gauss8")]
    Gauss8,
    #[serde(rename = "swissroll")]
    SwissRoll,
    #[serde(rename = "checkerboard")]
    Checkerboard,
    /// `1×8×8` procedural bars, squares and diagonals.
    #[serde(rename = "toy-images")]
    ToyImages,
}

pub const GAUSS8_RADIUS: f64 = 2.0;
pub const GAUSS8_STD: f64 = 0.1;
pub const SWISSROLL_NOISE: f64 = 0.25;
pub const IMAGE_SIDE: usize = 8;

impl DatasetKind {
    pub fn name(self) -> &'static str {
        match self {
            DatasetKind::Gauss8 => "gauss8",
            DatasetKind::SwissRoll => "swissroll",
            DatasetKind::Checkerboard => "checkerboard",
            DatasetKind::ToyImages => "toy-images",
        }
    }

    pub fn sample_shape(self) -> Vec<usize> {
        match self {
            DatasetKind::ToyImages => vec![1, IMAGE_SIDE, IMAGE_SIDE],
            _ => vec![2],
        }
    }

    pub fn is_image(self) -> bool {
        self == DatasetKind::ToyImages
    }

    /// Centres of the gauss8 modes.
    pub fn gauss8_modes() -> [[f64; 2]; 8] {
        std::array::from_fn(|k| {
            let a = 2.0 * PI * k as f64 / 8.0;
            [GAUSS8_RADIUS * a.cos(), GAUSS8_RADIUS * a.sin()]
        })
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss8" => Ok(DatasetKind::Gauss8),
            "swissroll" => Ok(DatasetKind::SwissRoll),
            "checkerboard" => Ok(DatasetKind::Checkerboard),
            "toy-images" => Ok(DatasetKind::ToyImages),
            other => Err(Error::Config(format!("unknown dataset `{other}`"))),
        }
    }
}

/// Raw (unstandardized) samples, flat row-major.
pub fn generate_raw(kind: DatasetKind, n: usize, rng: &mut Rng) -> Vec<f64> {
    let mut out = Vec::with_capacity(n * kind.sample_shape().iter().product::<usize>());
    match kind {
        DatasetKind::Gauss8 => {
            // Stratified: exactly n/8 points per mode (up to remainder), in shuffled order.
            let modes = DatasetKind::gauss8_modes();
            let mut labels: Vec<usize> = (0..n).map(|i| i % 8).collect();
            rng.shuffle(&mut labels);
            for k in labels {
                out.push(modes[k][0] + GAUSS8_STD * rng.normal());
                out.push(modes[k][1] + GAUSS8_STD * rng.normal());
            }
        }
        DatasetKind::SwissRoll => {
            for _ in 0..n {
                let t = 1.5 * PI * (1.0 + 2.0 * rng.uniform());
                out.push(t * t.cos() + rng.uniform_in(-SWISSROLL_NOISE, SWISSROLL_NOISE));
                out.push(t * t.sin() + rng.uniform_in(-SWISSROLL_NOISE, SWISSROLL_NOISE));
            }
        }
        DatasetKind::Checkerboard => {
            // 4×4 board on [-2, 2)², filled cells where column + row is even.
            for _ in 0..n {
                let x = rng.uniform_in(-2.0, 2.0);
                let col = x.floor() as i64;
                let row = 2 * rng.below(2) as i64 - 2 + col.rem_euclid(2);
                out.push(x);
                out.push(row as f64 + rng.uniform());
            }
        }
        DatasetKind::ToyImages => {
            for _ in 0..n {
                out.extend(toy_image(rng));
            }
        }
    }
    out
}

fn toy_image(rng: &mut Rng) -> Vec<f64> {
    let s = IMAGE_SIDE;
    let mut img = vec![-1.0; s * s];
    match rng.below(4) {
        0 => {
            let r = rng.below(s - 1);
            for c in 0..s {
                img[r * s + c] = 1.0;
                img[(r + 1) * s + c] = 1.0;
            }
        }
        1 => {
            let c = rng.below(s - 1);
            for r in 0..s {
                img[r * s + c] = 1.0;
                img[r * s + c + 1] = 1.0;
            }
        }
        2 => {
            let (r0, c0) = (rng.below(s - 2), rng.below(s - 2));
            for r in r0..r0 + 3 {
                for c in c0..c0 + 3 {
                    img[r * s + c] = 1.0;
                }
            }
        }
        _ => {
            let anti = rng.below(2) == 1;
            for i in 0..s {
                let c = if anti { s - 1 - i } else { i };
                img[i * s + c] = 1.0;
            }
        }
    }
    for v in &mut img {
        *v += 0.05 * rng.normal();
    }
    img
}

/// Standardized samples plus the statistics needed to undo it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    kind: DatasetKind,
    sample_shape: Vec<usize>,
    samples: Vec<f64>,
    standardization: Standardization,
}

/// Per-coordinate affine map `z = (x - mean) / std`. Image datasets share a
/// single mean and std across pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardization {
    pub fn fit(raw: &[f64], dim: usize, pooled: bool) -> Self {
        let n = (raw.len() / dim) as f64;
        let (mean, std) = if pooled {
            let m = raw.iter().sum::<f64>() / raw.len() as f64;
            let v = raw.iter().map(|x| (x - m).powi(2)).sum::<f64>() / raw.len() as f64;
            (vec![m; dim], vec![v.sqrt(); dim])
        } else {
            let mut mean = vec![0.0; dim];
            for row in raw.chunks(dim) {
                for (m, x) in mean.iter_mut().zip(row) {
                    *m += x / n;
                }
            }
            let mut var = vec![0.0; dim];
            for row in raw.chunks(dim) {
                for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                    *v += (x - m).powi(2) / n;
                }
            }
            (mean, var.into_iter().map(f64::sqrt).collect())
        };
        let std = std.into_iter().map(|s| if s > 1e-12 { s } else { 1.0 }).collect();
        Standardization { mean, std }
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        let dim = self.mean.len();
        raw.iter()
            .enumerate()
            .map(|(i, x)| (x - self.mean[i % dim]) / self.std[i % dim])
            .collect()
    }

    pub fn invert(&self, z: &[f64]) -> Vec<f64> {
        let dim = self.mean.len();
        z.iter()
            .enumerate()
            .map(|(i, z)| z * self.std[i % dim] + self.mean[i % dim])
            .collect()
    }
}

impl Dataset {
    pub fn from_raw(kind: DatasetKind, raw: Vec<f64>) -> Result<Self> {
        let sample_shape = kind.sample_shape();
        let dim: usize = sample_shape.iter().product();
        if raw.is_empty() || !raw.len().is_multiple_of(dim) {
            return Err(Error::Config(format!(
                "{} values do not form whole {dim}-value samples",
                raw.len()
            )));
        }
        let standardization = Standardization::fit(&raw, dim, kind.is_image());
        Ok(Dataset {
            kind,
            sample_shape,
            samples: standardization.apply(&raw),
            standardization,
        })
    }

    pub fn kind(&self) -> DatasetKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.sample_len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let d = self.sample_len();
        &self.samples[i * d..(i + 1) * d]
    }

    /// Standardized samples, flat row-major.
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn standardization(&self) -> &Standardization {
        &self.standardization
    }

    /// Samples mapped back to data coordinates.
    pub fn raw(&self) -> Vec<f64> {
        self.standardization.invert(&self.samples)
    }
}

/// `n` standardized samples of a built-in dataset, deterministic per seed.
pub fn make_dataset(kind: DatasetKind, n: usize, rng: &mut Rng) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("dataset size must be positive".into()));
    }
    Dataset::from_raw(kind, generate_raw(kind, n, rng))
}
