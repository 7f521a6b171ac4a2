//! Independent reference implementations shared by the integration suites.

#![allow(dead_code)]

pub mod suites;

use sdm_core::autodiff::{Graph, Var};
use sdm_core::topology::{LayerGeom, LayerMask, SparsityMask};
use sdm_core::{Result, Tensor};

/// Relative error `‖a − n‖ / max(‖a‖ + ‖n‖, floor)` between analytic and
/// central-difference gradients, maximized over all inputs.
pub fn gradient_check<F>(inputs: &[Tensor], build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let root = build(&mut g, &vars)?;
    g.backward(root)?;
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .map(|&v| {
            g.grad(v)
                .map(<[f64]>::to_vec)
                .unwrap_or_else(|| vec![0.0; g.value(v).numel()])
        })
        .collect();

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let root = build(&mut g, &vars)?;
        Ok(g.value(root).item())
    };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (k, input) in inputs.iter().enumerate() {
        let mut numeric = vec![0.0; input.numel()];
        for (i, n) in numeric.iter_mut().enumerate() {
            let mut plus = inputs.to_vec();
            plus[k].values_mut()[i] += h;
            let mut minus = inputs.to_vec();
            minus[k].values_mut()[i] -= h;
            *n = (eval(&plus)? - eval(&minus)?) / (2.0 * h);
        }
        let diff: f64 = analytic[k]
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm =
            analytic[k].iter().map(|a| a * a).sum::<f64>().sqrt() + numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        worst = worst.max(diff / norm.max(1e-8));
    }
    Ok(worst)
}

/// Reference top-magnitude pruning: sort the active positions by
/// `(|w| desc, index asc)` and keep the first `active − floor(active·k/den)`.
pub fn brute_prune(weights: &[f64], mask: &[bool], k: usize, den: usize) -> Vec<bool> {
    let mut active: Vec<usize> = (0..weights.len()).filter(|&i| mask[i]).collect();
    let drop = active.len() * k / den;
    active.sort_by(|&a, &b| weights[b].abs().total_cmp(&weights[a].abs()).then(a.cmp(&b)));
    let mut out = vec![false; weights.len()];
    for &i in &active[..active.len() - drop] {
        out[i] = true;
    }
    out
}

/// Reference gradient regrowth: activate the `count` inactive positions with
/// the largest `|g|`, lowest index first on ties.
pub fn brute_grow(grads: &[f64], mask: &[bool], count: usize) -> Vec<bool> {
    let mut inactive: Vec<usize> = (0..grads.len()).filter(|&i| !mask[i]).collect();
    inactive.sort_by(|&a, &b| grads[b].abs().total_cmp(&grads[a].abs()).then(a.cmp(&b)));
    let mut out = mask.to_vec();
    for &i in &inactive[..count] {
        out[i] = true;
    }
    out
}

pub fn single_layer_mask(bits: Vec<bool>) -> SparsityMask {
    SparsityMask::new(vec![LayerMask::new("l", bits)])
}

/// Densities `min(1, ε·f_l)` with ε found by bisection so that the active
/// parameter total equals `(1 − S)·N`.
pub fn bisection_densities(layers: &[LayerGeom], sparsity: f64) -> Vec<f64> {
    let total: f64 = layers.iter().map(|l| l.param_count() as f64).sum();
    let target = (1.0 - sparsity) * total;
    let active = |eps: f64| -> f64 {
        layers
            .iter()
            .map(|l| (eps * l.erk_factor()).min(1.0) * l.param_count() as f64)
            .sum()
    };
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while active(hi) < target {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if active(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let eps = 0.5 * (lo + hi);
    layers.iter().map(|l| (eps * l.erk_factor()).min(1.0)).collect()
}

/// Brute-force unbiased MMD² with the cubic polynomial kernel.
pub fn brute_mmd2(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let d = a[0].len() as f64;
    let k = |x: &[f64], y: &[f64]| {
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        (dot / d + 1.0).powi(3)
    };
    let (m, n) = (a.len() as f64, b.len() as f64);
    let mut xx = 0.0;
    for (i, x) in a.iter().enumerate() {
        for (j, y) in a.iter().enumerate() {
            if i != j {
                xx += k(x, y);
            }
        }
    }
    let mut yy = 0.0;
    for (i, x) in b.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            if i != j {
                yy += k(x, y);
            }
        }
    }
    let mut xy = 0.0;
    for x in a {
        for y in b {
            xy += k(x, y);
        }
    }
    xx / (m * (m - 1.0)) + yy / (n * (n - 1.0)) - 2.0 * xy / (m * n)
}

pub fn flatten(rows: &[Vec<f64>]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}
