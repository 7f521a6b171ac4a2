//! Noise schedules, closed-form forward noising, the noise-prediction loss,
//! and the DDIM sampler.
//!
//! Timesteps are 1-based throughout: `t ∈ 1..=T`, with `ᾱ_0 = 1` implied.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
}

impl NoiseSchedule {
    /// Schedule from explicit betas, each strictly inside `(0, 1)`.
    pub fn from_betas(beta: Vec<f64>) -> Result<Self> {
        if beta.is_empty() {
            return Err(Error::Config("noise schedule needs at least one step".into()));
        }
        if let Some(b) = beta.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::Config(format!("beta {b} outside (0, 1)")));
        }
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let alpha_bar = alpha
            .iter()
            .scan(1.0, |acc, a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        Ok(NoiseSchedule { beta, alpha, alpha_bar })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::Index { t, max: self.steps() });
        }
        Ok(())
    }
}

/// Betas interpolated linearly from `beta_start` to `beta_end`, both ends
/// included.
pub fn linear_schedule(beta_start: f64, beta_end: f64, steps: usize) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Config("diffusion steps must be at least 1".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
        )));
    }
    let beta = if steps == 1 {
        vec![beta_start]
    } else {
        let span = (beta_end - beta_start) / (steps - 1) as f64;
        (0..steps).map(|i| beta_start + span * i as f64).collect()
    };
    NoiseSchedule::from_betas(beta)
}

/// `x_t = √ᾱ_t · x0 + √(1 - ᾱ_t) · ε`.
pub fn forward_noise(x0: &Tensor, t: usize, eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    sched.check_t(t)?;
    if x0.shape() != eps.shape() {
        return Err(Error::Dimension(format!(
            "forward_noise: x0 {:?} vs eps {:?}",
            x0.shape(),
            eps.shape()
        )));
    }
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let values = x0
        .values()
        .iter()
        .zip(eps.values())
        .map(|(x, e)| a * x + b * e)
        .collect();
    Tensor::new(x0.shape().to_vec(), values)
}

/// Batched [`forward_noise`]: row `i` of the leading dimension uses `ts[i]`.
pub fn forward_noise_batch(x0: &Tensor, ts: &[usize], eps: &Tensor, sched: &NoiseSchedule) -> Result<Tensor> {
    if x0.shape() != eps.shape() {
        return Err(Error::Dimension(format!(
            "forward_noise: x0 {:?} vs eps {:?}",
            x0.shape(),
            eps.shape()
        )));
    }
    if x0.shape()[0] != ts.len() {
        return Err(Error::Dimension(format!(
            "{} timesteps for a batch of {}",
            ts.len(),
            x0.shape()[0]
        )));
    }
    let row = x0.numel() / ts.len();
    let mut values = Vec::with_capacity(x0.numel());
    for (i, &t) in ts.iter().enumerate() {
        sched.check_t(t)?;
        let ab = sched.alpha_bar(t);
        let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
        let span = i * row..(i + 1) * row;
        values.extend(
            x0.values()[span.clone()]
                .iter()
                .zip(&eps.values()[span])
                .map(|(x, e)| a * x + b * e),
        );
    }
    Tensor::new(x0.shape().to_vec(), values)
}

/// A noise-prediction network `ε_θ(x_t, t)` evaluated on a [`Graph`].
/// The leading dimension of `x_t` is the batch; `t` holds one timestep per
/// batch row.
pub trait EpsPredictor {
    fn predict(&self, graph: &mut Graph, x_t: Var, t: &[usize]) -> Result<Var>;
}

/// Wraps a plain function as a non-trainable predictor.
pub struct FnPredictor<F>(pub F);

impl<F> EpsPredictor for FnPredictor<F>
where
    F: Fn(&Tensor, &[usize]) -> Result<Tensor>,
{
    fn predict(&self, graph: &mut Graph, x_t: Var, t: &[usize]) -> Result<Var> {
        let out = (self.0)(graph.value(x_t), t)?;
        Ok(graph.constant(out))
    }
}

/// Builds `mse(ε, ε_θ(x_t, t))` on `graph` and returns the scalar loss node.
/// Call [`Graph::backward`] on the result to populate parameter gradients.
pub fn diffusion_loss<M: EpsPredictor + ?Sized>(
    model: &M,
    graph: &mut Graph,
    x0: &Tensor,
    ts: &[usize],
    eps: &Tensor,
    sched: &NoiseSchedule,
) -> Result<Var> {
    let x_t = graph.constant(forward_noise_batch(x0, ts, eps, sched)?);
    let pred = model.predict(graph, x_t, ts)?;
    let target = graph.constant(eps.clone());
    graph.mse(pred, target)
}

/// Ascending DDIM sub-sequence `1, 1+s, 1+2s, …` of `n_steps` timesteps with
/// stride `s = floor(T / n_steps)`. The sampler walks it from the top down.
pub fn ddim_timesteps(total: usize, n_steps: usize) -> Result<Vec<usize>> {
    if n_steps == 0 || n_steps > total {
        return Err(Error::Config(format!(
            "DDIM steps must lie in 1..={total}, got {n_steps}"
        )));
    }
    let stride = total / n_steps;
    Ok((0..n_steps).map(|i| 1 + i * stride).collect())
}

/// Coefficients of one DDIM transition `t → t_prev`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DdimCoefficients {
    /// Weight on `x_t` in the mean.
    pub x_t: f64,
    /// Weight on `ε̂` in the mean.
    pub eps: f64,
    /// Standard deviation of the injected noise.
    pub sigma: f64,
}

pub fn ddim_coefficients(sched: &NoiseSchedule, t: usize, t_prev: usize, eta: f64) -> DdimCoefficients {
    let ab_t = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t_prev);
    let sigma = eta * ((1.0 - ab_prev) / (1.0 - ab_t)).sqrt() * (1.0 - ab_t / ab_prev).sqrt();
    // x_prev = √ᾱ_prev · (x_t − √(1−ᾱ_t) ε̂)/√ᾱ_t + √(1−ᾱ_prev−σ²) ε̂ + σ z
    let ratio = (ab_prev / ab_t).sqrt();
    let dir = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
    DdimCoefficients {
        x_t: ratio,
        eps: dir - ratio * (1.0 - ab_t).sqrt(),
        sigma,
    }
}

/// DDIM sampling from `x_T ~ N(0, I)` of the given `shape` (batch first).
/// No clipping is applied to intermediate states.
pub fn ddim_sample<M: EpsPredictor + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    n_steps: usize,
    eta: f64,
    rng: &mut Rng,
    shape: &[usize],
) -> Result<Tensor> {
    let x = Tensor::gaussian(rng, shape);
    ddim_sample_from(model, sched, n_steps, eta, rng, x)
}

/// [`ddim_sample`] started from a caller-supplied `x_T`.
pub fn ddim_sample_from<M: EpsPredictor + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    n_steps: usize,
    eta: f64,
    rng: &mut Rng,
    mut x: Tensor,
) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::Config(format!("eta {eta} outside [0, 1]")));
    }
    let taus = ddim_timesteps(sched.steps(), n_steps)?;
    let batch = x.shape()[0];
    for i in (0..taus.len()).rev() {
        let t = taus[i];
        let t_prev = if i == 0 { 0 } else { taus[i - 1] };
        let mut g = Graph::new();
        let xv = g.constant(x.clone());
        let eps_var = model.predict(&mut g, xv, &vec![t; batch])?;
        let eps = g.value(eps_var);
        if eps.shape() != x.shape() {
            return Err(Error::Dimension(format!(
                "model returned {:?} for input {:?}",
                eps.shape(),
                x.shape()
            )));
        }
        let c = ddim_coefficients(sched, t, t_prev, eta);
        let next: Vec<f64> = x
            .values()
            .iter()
            .zip(eps.values())
            .map(|(&xv, &e)| {
                let mean = c.x_t * xv + c.eps * e;
                if c.sigma > 0.0 {
                    mean + c.sigma * rng.normal()
                } else {
                    mean
                }
            })
            .collect();
        x = Tensor::new(x.shape().to_vec(), next)?;
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step_schedule() {
        let s = linear_schedule(0.01, 0.02, 1).unwrap();
        assert_eq!(s.betas(), &[0.01]);
    }

    #[test]
    fn constant_schedule_products() {
        let s = linear_schedule(0.1, 0.1, 3).unwrap();
        for (got, want) in s.alpha_bars().iter().zip([0.9, 0.81, 0.729]) {
            assert!((got - want).abs() < 1e-15);
        }
    }

    #[test]
    fn image_schedule_midpoint() {
        let s = linear_schedule(0.0015, 0.0195, 1000).unwrap();
        assert_eq!(s.beta(1), 0.0015);
        assert!((s.beta(1000) - 0.0195).abs() < 1e-15);
        // β_500 = 0.0015 + 499 · 0.018 / 999
        assert!((s.beta(500) - 0.010_490_990_990_990_99).abs() < 1e-12);
        assert!((s.beta(500) - 0.010491).abs() < 1e-6);
    }

    #[test]
    fn schedule_validation() {
        assert!(linear_schedule(0.0, 0.1, 10).is_err());
        assert!(linear_schedule(0.2, 0.1, 10).is_err());
        assert!(linear_schedule(0.1, 1.0, 10).is_err());
        assert!(linear_schedule(0.1, 0.2, 0).is_err());
    }

    #[test]
    fn forward_noise_limits() {
        let s = linear_schedule(1e-4, 0.02, 100).unwrap();
        let x0 = Tensor::zeros(&[4]);
        let eps = Tensor::new(vec![4], vec![1.0, -2.0, 0.5, 3.0]).unwrap();
        let xt = forward_noise(&x0, 40, &eps, &s).unwrap();
        let k = (1.0 - s.alpha_bar(40)).sqrt();
        for (a, e) in xt.values().iter().zip(eps.values()) {
            assert!((a - k * e).abs() < 1e-15);
        }
        assert!(matches!(forward_noise(&x0, 0, &eps, &s), Err(Error::Index { .. })));
        assert!(matches!(forward_noise(&x0, 101, &eps, &s), Err(Error::Index { .. })));
    }

    #[test]
    fn near_noiseless_limit() {
        let s = NoiseSchedule::from_betas(vec![1e-300]).unwrap();
        let x0 = Tensor::new(vec![2], vec![1.5, -0.5]).unwrap();
        let eps = Tensor::new(vec![2], vec![10.0, 10.0]).unwrap();
        let xt = forward_noise(&x0, 1, &eps, &s).unwrap();
        assert_eq!(xt.values(), x0.values());
    }

    #[test]
    fn timestep_grid() {
        assert_eq!(ddim_timesteps(10, 5).unwrap(), vec![1, 3, 5, 7, 9]);
        assert_eq!(ddim_timesteps(4, 4).unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(ddim_timesteps(1000, 50).unwrap().last(), Some(&981));
        assert!(ddim_timesteps(10, 11).is_err());
        assert!(ddim_timesteps(10, 0).is_err());
    }

    #[test]
    fn final_step_returns_x0_estimate() {
        let s = linear_schedule(0.1, 0.2, 5).unwrap();
        let c = ddim_coefficients(&s, 3, 0, 1.0);
        assert_eq!(c.sigma, 0.0);
        let ab = s.alpha_bar(3);
        assert!((c.x_t - 1.0 / ab.sqrt()).abs() < 1e-12);
        assert!((c.eps + (1.0 - ab).sqrt() / ab.sqrt()).abs() < 1e-12);
    }
}
