//! Sparse connectivity: layer-wise density allocation (ER / ERK), random
//! mask initialization, magnitude pruning and gradient / random regrowth.
//!
//! Masks are per layer and cover only weight-bearing layers. Every routine
//! here is deterministic: ties prefer the lowest flat index and all
//! randomness comes from an explicit [`Rng`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    DenseMatrix,
    ConvKernel {
        kernel_h: usize,
        kernel_w: usize,
        /// Output spatial extent, needed for FLOPs accounting.
        out_h: usize,
        out_w: usize,
    },
}

/// Shape of one weight-bearing layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerGeom {
    pub layer_id: String,
    pub kind: LayerKind,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl LayerGeom {
    pub fn dense(layer_id: impl Into<String>, fan_in: usize, fan_out: usize) -> Self {
        LayerGeom {
            layer_id: layer_id.into(),
            kind: LayerKind::DenseMatrix,
            fan_in,
            fan_out,
        }
    }

    pub fn conv(
        layer_id: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        kernel_h: usize,
        kernel_w: usize,
        out_h: usize,
        out_w: usize,
    ) -> Self {
        LayerGeom {
            layer_id: layer_id.into(),
            kind: LayerKind::ConvKernel {
                kernel_h,
                kernel_w,
                out_h,
                out_w,
            },
            fan_in,
            fan_out,
        }
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            LayerKind::DenseMatrix => self.fan_in * self.fan_out,
            LayerKind::ConvKernel { kernel_h, kernel_w, .. } => self.fan_in * self.fan_out * kernel_h * kernel_w,
        }
    }

    /// Erdős–Rényi density factor `(n_in + n_out) / (n_in · n_out)`. Conv
    /// kernels use the kernel-aware variant that adds `w + h` to the
    /// numerator and divides by the full kernel volume.
    pub fn erk_factor(&self) -> f64 {
        let (n_in, n_out) = (self.fan_in as f64, self.fan_out as f64);
        match self.kind {
            LayerKind::DenseMatrix => (n_in + n_out) / (n_in * n_out),
            LayerKind::ConvKernel { kernel_h, kernel_w, .. } => {
                let (h, w) = (kernel_h as f64, kernel_w as f64);
                (n_in + n_out + w + h) / (n_in * n_out * w * h)
            }
        }
    }
}

/// Per-layer target densities for a global sparsity budget.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyPlan {
    pub sparsity: f64,
    pub densities: Vec<f64>,
}

impl TopologyPlan {
    /// Active-weight count each layer receives from this plan.
    pub fn active_counts(&self, layers: &[LayerGeom]) -> Vec<usize> {
        self.densities
            .iter()
            .zip(layers)
            .map(|(d, l)| (d * l.param_count() as f64).round() as usize)
            .collect()
    }
}

fn check_sparsity(sparsity: f64) -> Result<()> {
    if !(0.0..1.0).contains(&sparsity) {
        return Err(Error::InvalidSparsity(sparsity));
    }
    Ok(())
}

/// Erdős–Rényi allocation. Only dense-matrix layers are accepted.
pub fn allocate_er(layers: &[LayerGeom], sparsity: f64) -> Result<TopologyPlan> {
    if let Some(l) = layers.iter().find(|l| !matches!(l.kind, LayerKind::DenseMatrix)) {
        return Err(Error::Config(format!(
            "ER allocation covers dense layers only; `{}` is a conv kernel (use ERK)",
            l.layer_id
        )));
    }
    allocate_erk(layers, sparsity)
}

/// ERK allocation: `d_l = min(1, ε · factor_l)` with `ε` chosen so the
/// global density is exactly `1 - sparsity`. Layers that saturate at 1 are
/// frozen and `ε` is re-solved over the rest until nothing changes.
pub fn allocate_erk(layers: &[LayerGeom], sparsity: f64) -> Result<TopologyPlan> {
    check_sparsity(sparsity)?;
    if layers.is_empty() {
        return Err(Error::Config("allocation needs at least one layer".into()));
    }
    if let Some(l) = layers.iter().find(|l| l.param_count() == 0) {
        return Err(Error::Config(format!("layer `{}` has no weights", l.layer_id)));
    }
    let total: f64 = layers.iter().map(|l| l.param_count() as f64).sum();
    let budget = (1.0 - sparsity) * total;
    let mut saturated = vec![false; layers.len()];
    let mut scale;
    loop {
        let dense_params: f64 = layers
            .iter()
            .zip(&saturated)
            .filter(|(_, &s)| s)
            .map(|(l, _)| l.param_count() as f64)
            .sum();
        let weighted: f64 = layers
            .iter()
            .zip(&saturated)
            .filter(|(_, &s)| !s)
            .map(|(l, _)| l.erk_factor() * l.param_count() as f64)
            .sum();
        let remaining = budget - dense_params;
        if weighted == 0.0 {
            // Every layer is saturated.
            if remaining > 1e-9 * total {
                return Err(Error::Infeasible(format!(
                    "density {} unreachable even with every layer dense",
                    1.0 - sparsity
                )));
            }
            scale = 0.0;
            break;
        }
        if remaining < 0.0 {
            return Err(Error::Infeasible(format!(
                "saturated layers alone exceed the budget of {budget} weights"
            )));
        }
        scale = remaining / weighted;
        let mut changed = false;
        for (l, s) in layers.iter().zip(saturated.iter_mut()) {
            if !*s && scale * l.erk_factor() > 1.0 {
                *s = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let densities = layers
        .iter()
        .zip(&saturated)
        .map(|(l, &s)| if s { 1.0 } else { scale * l.erk_factor() })
        .collect();
    Ok(TopologyPlan { sparsity, densities })
}

/// Inclusion pattern of one layer's weights.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerMask {
    layer_id: String,
    bits: Vec<bool>,
    active: usize,
}

impl LayerMask {
    pub fn new(layer_id: impl Into<String>, bits: Vec<bool>) -> Self {
        let active = bits.iter().filter(|&&b| b).count();
        LayerMask {
            layer_id: layer_id.into(),
            bits,
            active,
        }
    }

    pub fn dense(layer_id: impl Into<String>, len: usize) -> Self {
        Self::new(layer_id, vec![true; len])
    }

    pub fn layer_id(&self) -> &str {
        &self.layer_id
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn active(&self) -> usize {
        self.active
    }

    pub fn inactive(&self) -> usize {
        self.bits.len() - self.active
    }

    pub fn is_active(&self, i: usize) -> bool {
        self.bits[i]
    }

    pub fn density(&self) -> f64 {
        self.active as f64 / self.bits.len() as f64
    }

    pub fn active_indices(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&i| self.bits[i]).collect()
    }

    pub fn inactive_indices(&self) -> Vec<usize> {
        (0..self.bits.len()).filter(|&i| !self.bits[i]).collect()
    }

    fn set(&mut self, i: usize, on: bool) {
        if self.bits[i] != on {
            self.bits[i] = on;
            if on {
                self.active += 1;
            } else {
                self.active -= 1;
            }
        }
    }

    /// Little-endian packed bitset: bit `i` lives in byte `i / 8` at
    /// position `i % 8`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, _) in self.bits.iter().enumerate().filter(|(_, &b)| b) {
            out[i / 8] |= 1 << (i % 8);
        }
        out
    }

    pub fn from_bytes(layer_id: impl Into<String>, bytes: &[u8], len: usize) -> Result<Self> {
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Malformed(format!(
                "bitset of {} bytes cannot hold exactly {len} bits",
                bytes.len()
            )));
        }
        let bits = (0..len).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
        Ok(Self::new(layer_id, bits))
    }
}

/// One [`LayerMask`] per maskable layer, in registry order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SparsityMask {
    layers: Vec<LayerMask>,
}

impl SparsityMask {
    pub fn new(layers: Vec<LayerMask>) -> Self {
        SparsityMask { layers }
    }

    pub fn dense(layers: &[LayerGeom]) -> Self {
        SparsityMask {
            layers: layers
                .iter()
                .map(|l| LayerMask::dense(l.layer_id.clone(), l.param_count()))
                .collect(),
        }
    }

    pub fn layers(&self) -> &[LayerMask] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &LayerMask {
        &self.layers[i]
    }

    pub fn get(&self, layer_id: &str) -> Option<&LayerMask> {
        self.layers.iter().find(|m| m.layer_id == layer_id)
    }

    pub fn active_counts(&self) -> Vec<usize> {
        self.layers.iter().map(LayerMask::active).collect()
    }

    pub fn total_active(&self) -> usize {
        self.layers.iter().map(LayerMask::active).sum()
    }

    pub fn total_len(&self) -> usize {
        self.layers.iter().map(LayerMask::len).sum()
    }

    /// SHA-256 over layer ids and packed bitsets.
    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for m in &self.layers {
            h.update((m.layer_id.len() as u32).to_le_bytes());
            h.update(m.layer_id.as_bytes());
            h.update((m.len() as u64).to_le_bytes());
            h.update(m.to_bytes());
        }
        hex::encode(h.finalize())
    }
}

/// Draws each layer's `round(d_l · params_l)` active positions uniformly
/// without replacement.
pub fn sample_mask(plan: &TopologyPlan, layers: &[LayerGeom], rng: &mut Rng) -> Result<SparsityMask> {
    if plan.densities.len() != layers.len() {
        return Err(Error::Dimension(format!(
            "plan covers {} layers, network has {}",
            plan.densities.len(),
            layers.len()
        )));
    }
    let masks = layers
        .iter()
        .zip(plan.active_counts(layers))
        .map(|(l, k)| {
            let n = l.param_count();
            let k = k.min(n);
            let mut bits = vec![false; n];
            if k == n {
                bits.fill(true);
            } else {
                for i in rng.sample_indices(n, k) {
                    bits[i] = true;
                }
            }
            LayerMask::new(l.layer_id.clone(), bits)
        })
        .collect();
    Ok(SparsityMask::new(masks))
}

/// `ceil((1 - p) · active)`, treating products within 1e-9 of an integer as
/// exact so that e.g. `0.7 · 10` keeps 7 rather than 8.
pub fn retained_count(active: usize, p: f64) -> usize {
    let x = (1.0 - p) * active as f64;
    let r = x.round();
    let kept = if (x - r).abs() < 1e-9 { r } else { x.ceil() };
    (kept as usize).min(active)
}

/// Number of connections a layer regrows after pruning with ratio `p`.
pub fn regrow_count(active: usize, p: f64) -> usize {
    active - retained_count(active, p)
}

/// Indices of the `k` largest `|score|` among `candidates`; ties prefer the
/// lower index.
fn top_k_by_magnitude(scores: &[f64], mut candidates: Vec<usize>, k: usize) -> Vec<usize> {
    candidates.sort_by(|&a, &b| scores[b].abs().total_cmp(&scores[a].abs()).then(a.cmp(&b)));
    candidates.truncate(k);
    candidates
}

fn check_layer_count(what: &str, got: usize, mask: &SparsityMask) -> Result<()> {
    if got != mask.layers.len() {
        return Err(Error::Dimension(format!(
            "{what}: {got} tensors for {} mask layers",
            mask.layers.len()
        )));
    }
    Ok(())
}

fn check_len(t: &Tensor, m: &LayerMask) -> Result<()> {
    if t.numel() != m.len() {
        return Err(Error::Dimension(format!(
            "layer `{}`: tensor has {} values, mask has {} bits",
            m.layer_id,
            t.numel(),
            m.len()
        )));
    }
    Ok(())
}

/// Keeps the `ceil((1-p)·active)` active positions of largest magnitude in
/// each layer and deactivates the rest. Inactive positions are untouched.
pub fn top_mag_prune(weights: &[&Tensor], mask: &SparsityMask, p: f64) -> Result<SparsityMask> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Config(format!("prune ratio {p} outside [0, 1)")));
    }
    check_layer_count("top_mag_prune", weights.len(), mask)?;
    let mut out = mask.clone();
    for (w, m) in weights.iter().zip(out.layers.iter_mut()) {
        check_len(w, m)?;
        let keep = retained_count(m.active, p);
        let keep_set = top_k_by_magnitude(w.values(), m.active_indices(), keep);
        let mut bits = vec![false; m.len()];
        for i in keep_set {
            bits[i] = true;
        }
        *m = LayerMask::new(m.layer_id.clone(), bits);
    }
    Ok(out)
}

fn check_capacity(mask: &SparsityMask, counts: &[usize]) -> Result<()> {
    if counts.len() != mask.layers.len() {
        return Err(Error::Dimension(format!(
            "{} grow counts for {} layers",
            counts.len(),
            mask.layers.len()
        )));
    }
    for (m, &k) in mask.layers.iter().zip(counts) {
        if k > m.inactive() {
            return Err(Error::Capacity {
                layer: m.layer_id.clone(),
                requested: k,
                available: m.inactive(),
            });
        }
    }
    Ok(())
}

/// Activates, per layer, the `counts[l]` inactive positions with the largest
/// dense gradient magnitude.
pub fn grow_gradient(grads: &[&Tensor], mask: &SparsityMask, counts: &[usize]) -> Result<SparsityMask> {
    check_layer_count("grow_gradient", grads.len(), mask)?;
    check_capacity(mask, counts)?;
    let mut out = mask.clone();
    for ((g, m), &k) in grads.iter().zip(out.layers.iter_mut()).zip(counts) {
        check_len(g, m)?;
        for i in top_k_by_magnitude(g.values(), m.inactive_indices(), k) {
            m.set(i, true);
        }
    }
    Ok(out)
}

/// Activates, per layer, `counts[l]` inactive positions chosen uniformly.
pub fn grow_random(mask: &SparsityMask, counts: &[usize], rng: &mut Rng) -> Result<SparsityMask> {
    check_capacity(mask, counts)?;
    let mut out = mask.clone();
    for (m, &k) in out.layers.iter_mut().zip(counts) {
        let pool = m.inactive_indices();
        for j in rng.sample_indices(pool.len(), k) {
            m.set(pool[j], true);
        }
    }
    Ok(out)
}

/// Zeroes inactive positions, leaving active ones unchanged.
pub fn apply_mask(weights: &Tensor, mask: &LayerMask) -> Result<Tensor> {
    let mut out = weights.clone();
    mask_in_place(out.values_mut(), mask)?;
    Ok(out)
}

pub fn mask_in_place(values: &mut [f64], mask: &LayerMask) -> Result<()> {
    if values.len() != mask.len() {
        return Err(Error::Dimension(format!(
            "layer `{}`: {} values, mask has {} bits",
            mask.layer_id,
            values.len(),
            mask.len()
        )));
    }
    for (v, &on) in values.iter_mut().zip(&mask.bits) {
        if !on {
            *v = 0.0;
        }
    }
    Ok(())
}

/// `1 - Σ active / Σ params` over the masked layers.
pub fn global_sparsity(mask: &SparsityMask, layers: &[LayerGeom]) -> f64 {
    let total: usize = layers.iter().map(LayerGeom::param_count).sum();
    if total == 0 {
        return 0.0;
    }
    1.0 - mask.total_active() as f64 / total as f64
}
