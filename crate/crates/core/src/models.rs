//! Toy noise-prediction networks and their parameter registries.
//!
//! Two denoisers are provided: an MLP for low-dimensional point data, whose
//! input is `x_t` concatenated with a sinusoidal time embedding, and a small
//! shape-preserving conv stack for single-sample image grids, where the time
//! embedding is projected to a per-channel offset after the first conv.
//!
//! Only weight matrices and kernels are maskable. Biases and the conv time
//! projection stay dense.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::diffusion::EpsPredictor;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::topology::{LayerGeom, LayerKind, SparsityMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Silu,
    Relu,
}

/// Sinusoidal timestep embedding: `[sin(t·ω_0), cos(t·ω_0), sin(t·ω_1), …]`
/// with `ω_i = 10000^(-i / (dim/2))`.
pub fn sinusoidal_embed(t: usize, dim: usize) -> Result<Tensor> {
    if dim == 0 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "time embedding dimension must be even and positive, got {dim}"
        )));
    }
    let half = dim / 2;
    let mut values = Vec::with_capacity(dim);
    for i in 0..half {
        let freq = 10_000f64.powf(-(i as f64) / half as f64);
        let arg = t as f64 * freq;
        values.push(arg.sin());
        values.push(arg.cos());
    }
    Tensor::new(vec![dim], values)
}

/// `[batch × dim]` matrix of embeddings, one row per timestep.
pub fn embed_batch(ts: &[usize], dim: usize) -> Result<Tensor> {
    let mut values = Vec::with_capacity(ts.len() * dim);
    for &t in ts {
        values.extend_from_slice(sinusoidal_embed(t, dim)?.values());
    }
    Tensor::new(vec![ts.len(), dim], values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DenoiserSpec {
    Mlp {
        data_dim: usize,
        hidden: Vec<usize>,
        activation: Activation,
        time_dim: usize,
    },
    Conv {
        channels: usize,
        height: usize,
        width: usize,
        hidden_channels: Vec<usize>,
        kernel: usize,
        activation: Activation,
        time_dim: usize,
    },
}

impl DenoiserSpec {
    /// Default MLP: 2 → 128 → 128 → 128 → 2.
    pub fn default_mlp(data_dim: usize) -> Self {
        DenoiserSpec::Mlp {
            data_dim,
            hidden: vec![128, 128, 128],
            activation: Activation::Silu,
            time_dim: 16,
        }
    }

    /// Default conv stack for `1×8×8` grids: three hidden layers of 8
    /// channels with 3×3 kernels.
    pub fn default_conv() -> Self {
        DenoiserSpec::Conv {
            channels: 1,
            height: 8,
            width: 8,
            hidden_channels: vec![8, 8, 8],
            kernel: 3,
            activation: Activation::Silu,
            time_dim: 16,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (layers, time_dim) = match self {
            DenoiserSpec::Mlp {
                data_dim,
                hidden,
                time_dim,
                ..
            } => {
                if *data_dim == 0 || hidden.contains(&0) {
                    return Err(Error::Config("MLP widths must be positive".into()));
                }
                (hidden.len() + 1, *time_dim)
            }
            DenoiserSpec::Conv {
                channels,
                height,
                width,
                hidden_channels,
                kernel,
                time_dim,
                ..
            } => {
                if *channels == 0 || *height == 0 || *width == 0 || hidden_channels.contains(&0) {
                    return Err(Error::Config("conv extents must be positive".into()));
                }
                if kernel % 2 == 0 || kernel / 2 >= (*height).min(*width).max(1) && *kernel > 1 {
                    return Err(Error::Config(format!(
                        "conv kernel must be odd and fit the {height}×{width} input, got {kernel}"
                    )));
                }
                (hidden_channels.len() + 1, *time_dim)
            }
        };
        if layers < 2 {
            return Err(Error::Config(
                "a denoiser needs at least two weight-bearing layers".into(),
            ));
        }
        if time_dim == 0 || time_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "time embedding dimension must be even and positive, got {time_dim}"
            )));
        }
        Ok(())
    }

    /// Shape of one data sample.
    pub fn sample_shape(&self) -> Vec<usize> {
        match self {
            DenoiserSpec::Mlp { data_dim, .. } => vec![*data_dim],
            DenoiserSpec::Conv {
                channels,
                height,
                width,
                ..
            } => vec![*channels, *height, *width],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub layer_id: String,
    pub geom: LayerGeom,
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub maskable: bool,
}

impl ParamEntry {
    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.as_ref().map_or(0, Tensor::numel)
    }
}

/// Ordered parameters of a denoiser.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRegistry {
    entries: Vec<ParamEntry>,
}

impl ParamRegistry {
    pub fn new(entries: Vec<ParamEntry>) -> Result<Self> {
        for (i, e) in entries.iter().enumerate() {
            if entries[..i].iter().any(|o| o.layer_id == e.layer_id) {
                return Err(Error::Config(format!("duplicate layer id `{}`", e.layer_id)));
            }
            if e.geom.param_count() != e.weight.numel() {
                return Err(Error::Dimension(format!(
                    "layer `{}`: geometry implies {} weights, tensor has {}",
                    e.layer_id,
                    e.geom.param_count(),
                    e.weight.numel()
                )));
            }
        }
        Ok(ParamRegistry { entries })
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_params(&self) -> usize {
        self.entries.iter().map(ParamEntry::param_count).sum()
    }

    /// Geometry of every weight-bearing layer.
    pub fn geoms(&self) -> Vec<LayerGeom> {
        self.entries.iter().map(|e| e.geom.clone()).collect()
    }

    /// Geometry of the maskable layers, in registry order.
    pub fn maskable_geoms(&self) -> Vec<LayerGeom> {
        self.entries
            .iter()
            .filter(|e| e.maskable)
            .map(|e| e.geom.clone())
            .collect()
    }

    /// Registry positions of the maskable layers.
    pub fn maskable_indices(&self) -> Vec<usize> {
        (0..self.entries.len()).filter(|&i| self.entries[i].maskable).collect()
    }

    pub fn maskable_weights(&self) -> Vec<&Tensor> {
        self.entries.iter().filter(|e| e.maskable).map(|e| &e.weight).collect()
    }

    /// Zeroes every inactive weight. `mask` must list the maskable layers
    /// in registry order.
    pub fn apply_mask(&mut self, mask: &SparsityMask) -> Result<()> {
        let idx = self.maskable_indices();
        if idx.len() != mask.layers().len() {
            return Err(Error::Dimension(format!(
                "mask has {} layers, registry has {} maskable layers",
                mask.layers().len(),
                idx.len()
            )));
        }
        for (i, m) in idx.into_iter().zip(mask.layers()) {
            let e = &mut self.entries[i];
            if e.layer_id != m.layer_id() {
                return Err(Error::Dimension(format!(
                    "mask layer `{}` does not match registry layer `{}`",
                    m.layer_id(),
                    e.layer_id
                )));
            }
            crate::topology::mask_in_place(e.weight.values_mut(), m)?;
        }
        Ok(())
    }
}

/// `(total, active)` parameter counts. Active counts unmasked weights of
/// maskable layers plus every never-masked parameter.
pub fn masked_param_count(registry: &ParamRegistry, mask: &SparsityMask) -> Result<(usize, usize)> {
    let mut total = 0;
    let mut active = 0;
    for e in registry.entries() {
        total += e.param_count();
        let bias = e.bias.as_ref().map_or(0, Tensor::numel);
        if e.maskable {
            let m = mask
                .get(&e.layer_id)
                .ok_or_else(|| Error::Dimension(format!("mask does not cover layer `{}`", e.layer_id)))?;
            active += m.active() + bias;
        } else {
            active += e.param_count();
        }
    }
    Ok((total, active))
}

/// Variables of a registry bound onto a graph, in registry order.
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub vars: Vec<(Var, Option<Var>)>,
}

/// `(weight_grad, bias_grad)` per registry entry.
pub type ParamGrads = Vec<(Tensor, Option<Tensor>)>;

impl BoundParams {
    /// Weight gradients for the maskable layers, in mask order. Missing
    /// gradients (layer not on the loss path) come back as zeros.
    pub fn maskable_weight_grads(&self, graph: &Graph, registry: &ParamRegistry) -> Vec<Tensor> {
        registry
            .maskable_indices()
            .into_iter()
            .map(|i| grad_or_zeros(graph, self.vars[i].0))
            .collect()
    }

    /// `(weight_grad, bias_grad)` for every entry.
    pub fn grads(&self, graph: &Graph) -> ParamGrads {
        self.vars
            .iter()
            .map(|&(w, b)| (grad_or_zeros(graph, w), b.map(|b| grad_or_zeros(graph, b))))
            .collect()
    }
}

fn grad_or_zeros(graph: &Graph, v: Var) -> Tensor {
    let value = graph.value(v);
    let g = graph
        .grad(v)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; value.numel()]);
    Tensor::new(value.shape().to_vec(), g).expect("gradient mirrors value shape")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Denoiser {
    spec: DenoiserSpec,
    registry: ParamRegistry,
}

fn kaiming_uniform(rng: &mut Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let numel: usize = shape.iter().product();
    let values = (0..numel).map(|_| rng.uniform_in(-bound, bound)).collect();
    Tensor::new(shape.to_vec(), values).expect("shape matches")
}

impl Denoiser {
    /// Fresh denoiser with fan-in-scaled uniform weights and zero biases.
    pub fn init(spec: DenoiserSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let mut entries = Vec::new();
        match &spec {
            DenoiserSpec::Mlp {
                data_dim,
                hidden,
                time_dim,
                ..
            } => {
                let widths: Vec<usize> = std::iter::once(data_dim + time_dim)
                    .chain(hidden.iter().copied())
                    .chain(std::iter::once(*data_dim))
                    .collect();
                for (l, w) in widths.windows(2).enumerate() {
                    let (fan_in, fan_out) = (w[0], w[1]);
                    entries.push(ParamEntry {
                        layer_id: format!("fc{l}"),
                        geom: LayerGeom::dense(format!("fc{l}"), fan_in, fan_out),
                        weight: kaiming_uniform(rng, &[fan_in, fan_out], fan_in),
                        bias: Some(Tensor::zeros(&[fan_out])),
                        maskable: true,
                    });
                }
            }
            DenoiserSpec::Conv {
                channels,
                height,
                width,
                hidden_channels,
                kernel,
                time_dim,
                ..
            } => {
                let chans: Vec<usize> = std::iter::once(*channels)
                    .chain(hidden_channels.iter().copied())
                    .chain(std::iter::once(*channels))
                    .collect();
                for (l, c) in chans.windows(2).enumerate() {
                    let (c_in, c_out) = (c[0], c[1]);
                    let id = format!("conv{l}");
                    entries.push(ParamEntry {
                        layer_id: id.clone(),
                        geom: LayerGeom::conv(id, c_in, c_out, *kernel, *kernel, *height, *width),
                        weight: kaiming_uniform(rng, &[c_out, c_in, *kernel, *kernel], c_in * kernel * kernel),
                        bias: Some(Tensor::zeros(&[c_out])),
                        maskable: true,
                    });
                }
                let first = hidden_channels[0];
                entries.push(ParamEntry {
                    layer_id: "time_proj".into(),
                    geom: LayerGeom::dense("time_proj", *time_dim, first),
                    weight: kaiming_uniform(rng, &[*time_dim, first], *time_dim),
                    bias: None,
                    maskable: false,
                });
            }
        }
        Ok(Denoiser {
            spec,
            registry: ParamRegistry::new(entries)?,
        })
    }

    pub fn from_parts(spec: DenoiserSpec, registry: ParamRegistry) -> Result<Self> {
        spec.validate()?;
        let reference = Denoiser::init(spec.clone(), &mut Rng::new(0))?;
        let same_layout = reference.registry.len() == registry.len()
            && reference
                .registry
                .entries()
                .iter()
                .zip(registry.entries())
                .all(|(a, b)| {
                    a.layer_id == b.layer_id
                        && a.geom == b.geom
                        && a.weight.shape() == b.weight.shape()
                        && a.bias.as_ref().map(Tensor::shape) == b.bias.as_ref().map(Tensor::shape)
                        && a.maskable == b.maskable
                });
        if !same_layout {
            return Err(Error::Dimension(
                "registry layout does not match the denoiser spec".into(),
            ));
        }
        Ok(Denoiser { spec, registry })
    }

    pub fn spec(&self) -> &DenoiserSpec {
        &self.spec
    }

    pub fn registry(&self) -> &ParamRegistry {
        &self.registry
    }

    pub fn registry_mut(&mut self) -> &mut ParamRegistry {
        &mut self.registry
    }

    /// Puts every parameter on `graph` as a differentiable leaf.
    pub fn bind(&self, graph: &mut Graph) -> BoundParams {
        self.bind_with(graph, true)
    }

    fn bind_with(&self, graph: &mut Graph, trainable: bool) -> BoundParams {
        let mut leaf = |t: &Tensor| {
            if trainable {
                graph.param(t.clone())
            } else {
                graph.constant(t.clone())
            }
        };
        let vars = self
            .registry
            .entries()
            .iter()
            .map(|e| (leaf(&e.weight), e.bias.as_ref().map(&mut leaf)))
            .collect();
        BoundParams { vars }
    }

    /// Borrowing view that predicts with already-bound parameters.
    pub fn with_params<'a>(&'a self, params: &'a BoundParams) -> BoundDenoiser<'a> {
        BoundDenoiser { model: self, params }
    }

    /// Forward pass `ε_θ(x_t, t)` with the parameters in `params`.
    pub fn forward(&self, graph: &mut Graph, params: &BoundParams, x_t: Var, ts: &[usize]) -> Result<Var> {
        let batch = graph.value(x_t).shape()[0];
        if ts.len() != batch {
            return Err(Error::Dimension(format!(
                "{} timesteps for a batch of {batch}",
                ts.len()
            )));
        }
        let mut expected = vec![batch];
        expected.extend(self.spec.sample_shape());
        if graph.value(x_t).shape() != expected.as_slice() {
            return Err(Error::Dimension(format!(
                "denoiser expects input {expected:?}, got {:?}",
                graph.value(x_t).shape()
            )));
        }
        match &self.spec {
            DenoiserSpec::Mlp {
                activation, time_dim, ..
            } => {
                let emb = graph.constant(embed_batch(ts, *time_dim)?);
                let mut h = graph.concat_cols(x_t, emb)?;
                let last = params.vars.len() - 1;
                for (l, &(w, b)) in params.vars.iter().enumerate() {
                    h = graph.matmul(h, w)?;
                    if let Some(b) = b {
                        h = graph.add_bias(h, b)?;
                    }
                    if l < last {
                        h = activate(graph, h, *activation);
                    }
                }
                Ok(h)
            }
            DenoiserSpec::Conv {
                kernel,
                activation,
                time_dim,
                ..
            } => {
                let pad = kernel / 2;
                let n_conv = params.vars.len() - 1;
                let (proj_w, _) = params.vars[n_conv];
                let emb = graph.constant(embed_batch(ts, *time_dim)?);
                let time_offset = graph.matmul(emb, proj_w)?;
                let mut h = x_t;
                for (l, &(w, b)) in params.vars[..n_conv].iter().enumerate() {
                    h = graph.conv2d(h, w, 1, pad)?;
                    if let Some(b) = b {
                        h = graph.add_channel(h, b)?;
                    }
                    if l == 0 {
                        h = graph.add_channel(h, time_offset)?;
                    }
                    if l + 1 < n_conv {
                        h = activate(graph, h, *activation);
                    }
                }
                Ok(h)
            }
        }
    }
}

fn activate(graph: &mut Graph, h: Var, act: Activation) -> Var {
    match act {
        Activation::Silu => graph.silu(h),
        Activation::Relu => graph.relu(h),
    }
}

/// A denoiser paired with parameter variables already on the graph.
pub struct BoundDenoiser<'a> {
    model: &'a Denoiser,
    params: &'a BoundParams,
}

impl EpsPredictor for BoundDenoiser<'_> {
    fn predict(&self, graph: &mut Graph, x_t: Var, t: &[usize]) -> Result<Var> {
        self.model.forward(graph, self.params, x_t, t)
    }
}

/// Inference: parameters enter the graph as constants.
impl EpsPredictor for Denoiser {
    fn predict(&self, graph: &mut Graph, x_t: Var, t: &[usize]) -> Result<Var> {
        let params = self.bind_with(graph, false);
        self.forward(graph, &params, x_t, t)
    }
}

/// Count of dense-matrix vs conv-kernel layers, handy for choosing ER vs ERK.
pub fn has_conv_layers(geoms: &[LayerGeom]) -> bool {
    geoms.iter().any(|g| matches!(g.kind, LayerKind::ConvKernel { .. }))
}
