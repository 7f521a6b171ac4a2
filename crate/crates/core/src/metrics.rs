//! Compute accounting and sample-quality metrics.
//!
//! FLOPs follow the weight-op convention: two FLOPs per multiply-add, one
//! multiply per active weight per output position, activations and biases
//! ignored. A training step costs one forward plus a backward of twice the
//! forward; RigL additionally pays a dense backward at every exploration.
//!
//! Quality metrics operate on raw sample coordinates. The Fréchet distance
//! is the FID formula and `kid_mmd` the KID estimator, both without an
//! Inception feature map.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ParamRegistry;
use crate::topology::{LayerGeom, LayerKind, SparsityMask};
use crate::training::{DynamicMethod, ExplorationSchedule};

/// Forward FLOPs of one layer for a single sample at the given density.
pub fn layer_flops(geom: &LayerGeom, density: f64) -> f64 {
    let positions = match geom.kind {
        LayerKind::DenseMatrix => 1,
        LayerKind::ConvKernel { out_h, out_w, .. } => out_h * out_w,
    };
    2.0 * geom.param_count() as f64 * positions as f64 * density
}

/// Density of each registry entry under `mask`; never-masked layers are 1.
pub fn layer_densities(registry: &ParamRegistry, mask: &SparsityMask) -> Result<Vec<f64>> {
    registry
        .entries()
        .iter()
        .map(|e| {
            if !e.maskable {
                return Ok(1.0);
            }
            mask.get(&e.layer_id)
                .map(|m| m.density())
                .ok_or_else(|| Error::Dimension(format!("mask does not cover `{}`", e.layer_id)))
        })
        .collect()
}

/// `(sparse, dense)` forward FLOPs per sample.
pub fn forward_flops(registry: &ParamRegistry, mask: &SparsityMask) -> Result<(f64, f64)> {
    let densities = layer_densities(registry, mask)?;
    let mut sparse = 0.0;
    let mut dense = 0.0;
    for (e, d) in registry.entries().iter().zip(densities) {
        sparse += layer_flops(&e.geom, d);
        dense += layer_flops(&e.geom, 1.0);
    }
    Ok((sparse, dense))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsReport {
    pub dense_forward_flops: f64,
    pub sparse_forward_flops: f64,
    pub forward_ratio: f64,
    pub train_flops_total: f64,
    pub dense_train_flops_total: f64,
    pub train_ratio: f64,
    pub test_flops_per_sample: f64,
    pub dense_test_flops_per_sample: f64,
    pub test_ratio: f64,
    pub exploration_steps: usize,
}

/// Training and sampling cost of a run relative to its dense counterpart.
/// `sampling_steps` is the number of denoiser evaluations per generated
/// sample.
pub fn train_flops(
    registry: &ParamRegistry,
    mask: &SparsityMask,
    steps: usize,
    batch_size: usize,
    schedule: Option<&ExplorationSchedule>,
    sampling_steps: usize,
) -> Result<FlopsReport> {
    let (sparse_fwd, dense_fwd) = forward_flops(registry, mask)?;
    let forward_ratio = if dense_fwd > 0.0 { sparse_fwd / dense_fwd } else { 1.0 };
    let batch = batch_size as f64;
    let explorations = schedule.map_or(0, |s| steps / s.interval);
    let dense_backward_per_exploration = match schedule {
        Some(s) if s.method == DynamicMethod::RigL => 2.0 * dense_fwd * batch,
        _ => 0.0,
    };
    let train = 3.0 * sparse_fwd * batch * steps as f64 + dense_backward_per_exploration * explorations as f64;
    let dense_train = 3.0 * dense_fwd * batch * steps as f64;
    let train_ratio = if dense_train > 0.0 {
        train / dense_train
    } else {
        forward_ratio
    };
    Ok(FlopsReport {
        dense_forward_flops: dense_fwd,
        sparse_forward_flops: sparse_fwd,
        forward_ratio,
        train_flops_total: train,
        dense_train_flops_total: dense_train,
        train_ratio,
        test_flops_per_sample: sparse_fwd * sampling_steps as f64,
        dense_test_flops_per_sample: dense_fwd * sampling_steps as f64,
        test_ratio: forward_ratio,
        exploration_steps: explorations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamsReport {
    pub total: usize,
    pub active: usize,
    pub ratio: f64,
}

pub fn params_report(registry: &ParamRegistry, mask: &SparsityMask) -> Result<ParamsReport> {
    let (total, active) = crate::models::masked_param_count(registry, mask)?;
    Ok(ParamsReport {
        total,
        active,
        ratio: active as f64 / total as f64,
    })
}

fn as_matrix(samples: &[f64], dim: usize, what: &str) -> Result<DMatrix<f64>> {
    if dim == 0 || !samples.len().is_multiple_of(dim) {
        return Err(Error::Dimension(format!(
            "{what}: {} values is not a whole number of {dim}-dimensional samples",
            samples.len()
        )));
    }
    Ok(DMatrix::from_row_slice(samples.len() / dim, dim, samples))
}

fn mean_and_cov(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let mean = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n - 1.0);
    (mean, cov)
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

const JITTER: f64 = 1e-9;

/// Fréchet distance between Gaussian fits, plus whether diagonal jitter was
/// added because a covariance was (near) singular.
pub fn frechet_distance_report(a: &[f64], b: &[f64], dim: usize) -> Result<(f64, bool)> {
    let xa = as_matrix(a, dim, "frechet")?;
    let xb = as_matrix(b, dim, "frechet")?;
    for (x, name) in [(&xa, "first"), (&xb, "second")] {
        if x.nrows() < dim + 1 {
            return Err(Error::Dimension(format!(
                "frechet: {name} set has {} samples, need at least {} in dimension {dim}",
                x.nrows(),
                dim + 1
            )));
        }
    }
    let (mu_a, mut cov_a) = mean_and_cov(&xa);
    let (mu_b, mut cov_b) = mean_and_cov(&xb);
    let degenerate = |c: &DMatrix<f64>| {
        let ev = SymmetricEigen::new(c.clone()).eigenvalues;
        let scale = ev.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        ev.iter().any(|&l| l <= 1e-12 * scale)
    };
    let jitter = degenerate(&cov_a) || degenerate(&cov_b);
    if jitter {
        let eye = DMatrix::<f64>::identity(dim, dim) * JITTER;
        cov_a += &eye;
        cov_b += &eye;
    }
    let root_a = sym_sqrt(&cov_a);
    let mut inner = &root_a * &cov_b * &root_a;
    inner = (&inner + inner.transpose()) * 0.5;
    let tr_cross: f64 = SymmetricEigen::new(inner)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .sum();
    let mean_term = (mu_a - mu_b).norm_squared();
    let d = mean_term + cov_a.trace() + cov_b.trace() - 2.0 * tr_cross;
    Ok((d.max(0.0), jitter))
}

/// `‖μ_a − μ_b‖² + Tr(Σ_a + Σ_b − 2(Σ_a Σ_b)^{1/2})` over flat row-major
/// sample sets of dimension `dim`.
pub fn frechet_distance(a: &[f64], b: &[f64], dim: usize) -> Result<f64> {
    frechet_distance_report(a, b, dim).map(|(d, _)| d)
}

/// Cubic polynomial kernel `(xᵀy / d + 1)³`.
pub fn poly_kernel(x: &[f64], y: &[f64]) -> f64 {
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let k = dot / x.len() as f64 + 1.0;
    k * k * k
}

/// Unbiased MMD² between `a` (m samples) and `b` (n samples).
pub fn mmd2_unbiased(a: &[f64], b: &[f64], dim: usize) -> Result<f64> {
    let m = a.len() / dim;
    let n = b.len() / dim;
    if !a.len().is_multiple_of(dim) || !b.len().is_multiple_of(dim) {
        return Err(Error::Dimension("kid: ragged sample sets".into()));
    }
    if m < 2 || n < 2 {
        return Err(Error::Dimension(format!(
            "kid: need at least 2 samples per set, got {m} and {n}"
        )));
    }
    let row = |i: usize| i * dim..(i + 1) * dim;
    let within = |s: &[f64], count: usize| -> f64 {
        let mut acc = 0.0;
        for i in 0..count {
            for j in i + 1..count {
                acc += poly_kernel(&s[row(i)], &s[row(j)]);
            }
        }
        2.0 * acc / (count * (count - 1)) as f64
    };
    let mut cross = 0.0;
    for i in 0..m {
        for j in 0..n {
            cross += poly_kernel(&a[row(i)], &b[row(j)]);
        }
    }
    Ok(within(a, m) + within(b, n) - 2.0 * cross / (m * n) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KidEstimate {
    pub value: f64,
    pub std_error: f64,
    pub blocks: usize,
}

/// KID: unbiased MMD² averaged over consecutive blocks of `block_size`
/// samples from each set. Sets smaller than one block form a single block.
pub fn kid_mmd(a: &[f64], b: &[f64], dim: usize, block_size: usize) -> Result<KidEstimate> {
    if dim == 0 || block_size < 2 {
        return Err(Error::Config("kid: need dim > 0 and block size >= 2".into()));
    }
    let m = a.len() / dim;
    let n = b.len() / dim;
    let blocks = (m.min(n) / block_size).max(1);
    let values: Vec<f64> = if blocks == 1 && m.min(n) < 2 * block_size {
        vec![mmd2_unbiased(a, b, dim)?]
    } else {
        (0..blocks)
            .map(|k| {
                let span = k * block_size * dim..(k + 1) * block_size * dim;
                mmd2_unbiased(&a[span.clone()], &b[span], dim)
            })
            .collect::<Result<_>>()?
    };
    let count = values.len() as f64;
    let mean = values.iter().sum::<f64>() / count;
    let std_error = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (count - 1.0);
        (var / count).sqrt()
    } else {
        0.0
    };
    Ok(KidEstimate {
        value: mean,
        std_error,
        blocks: values.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub frechet: f64,
    pub kid: f64,
    pub kid_std_error: f64,
    pub n_samples: usize,
    pub jitter_applied: bool,
    pub feature_space: String,
}

pub fn quality_report(
    generated: &[f64],
    reference: &[f64],
    dim: usize,
    kid_block_size: usize,
) -> Result<QualityReport> {
    let (frechet, jitter_applied) = frechet_distance_report(generated, reference, dim)?;
    let kid = kid_mmd(generated, reference, dim, kid_block_size)?;
    Ok(QualityReport {
        frechet,
        kid: kid.value,
        kid_std_error: kid.std_error,
        n_samples: generated.len() / dim,
        jitter_applied,
        feature_space: "raw-coordinates".into(),
    })
}
