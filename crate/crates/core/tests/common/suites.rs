//! Check batteries shared by the focused suites and the acceptance runner.
//! Each returns named checks so callers can both assert and report them.

use sdm_core::autodiff::{Graph, Var};
use sdm_core::diffusion::{ddim_sample, ddim_sample_from, forward_noise, linear_schedule, FnPredictor};
use sdm_core::experiments::checkpoint::Checkpoint;
use sdm_core::experiments::config::ExperimentConfig;
use sdm_core::experiments::datasets::{make_dataset, DatasetKind};
use sdm_core::experiments::run::{build_dataset, resume_trainer};
use sdm_core::metrics::{forward_flops, frechet_distance, kid_mmd, layer_densities, mmd2_unbiased, params_report};
use sdm_core::models::{BoundParams, Denoiser, DenoiserSpec, ParamEntry, ParamRegistry};
use sdm_core::topology::{allocate_er, allocate_erk, grow_gradient, top_mag_prune, LayerGeom};
use sdm_core::training::{Method, Trainer};
use sdm_core::{Rng, Tensor};

use super::{bisection_densities, brute_grow, brute_mmd2, brute_prune, flatten, gradient_check, single_layer_mask};

#[derive(Debug)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            pass,
            detail: detail.into(),
        }
    }
}

pub fn assert_all(checks: &[Check]) {
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.pass)
        .map(|c| format!("{}: {}", c.name, c.detail))
        .collect();
    assert!(failed.is_empty(), "failed checks:\n{}", failed.join("\n"));
}

fn small_config(method: Method, sparsity: f64, prune_rate: f64, interval: usize, steps: usize) -> ExperimentConfig {
    ExperimentConfig {
        method,
        sparsity,
        prune_rate,
        exploration_interval: interval,
        hidden: vec![32, 32],
        steps,
        batch_size: 16,
        dataset_size: 256,
        eval_samples: 200,
        kid_block_size: 100,
        log_every: 10,
        ..ExperimentConfig::default()
    }
}

// Mask mechanics ------------------------------------------------------------

/// Per-layer active counts never change across exploration cycles.
pub fn sparsity_conservation(method: Method, cycles: usize) -> Check {
    let interval = 3;
    let config = small_config(method, 0.8, 0.3, interval, cycles * interval);
    let data = build_dataset(&config).unwrap();
    let mut trainer = Trainer::new(config.train_config(), &data, &Rng::new(4)).unwrap();
    let initial = trainer.mask().unwrap().active_counts();
    let mut ok = true;
    while trainer.step_count() < config.steps {
        trainer.step().unwrap();
        ok &= trainer.mask().unwrap().active_counts() == initial;
    }
    let events = trainer.log().events.len();
    let layer_ok = trainer
        .log()
        .events
        .iter()
        .flat_map(|e| &e.layers)
        .all(|l| l.active_before == l.active_after && l.pruned == l.grown);
    let grew = trainer.log().events.iter().flat_map(|e| &e.layers).any(|l| l.grown > 0);
    Check::new(
        format!("{method} conserves per-layer counts over {cycles} cycles"),
        ok && layer_ok && grew && events == cycles,
        format!("{events} events, counts {initial:?}"),
    )
}

/// Random prune and gradient-growth instances against sort-based references.
pub fn prune_grow_oracles(instances: usize) -> Check {
    let mut rng = Rng::new(77);
    let mut mismatches = 0;
    for _ in 0..instances {
        let n = 1 + rng.below(60);
        // Few distinct magnitudes so ties are common.
        let levels = 1 + rng.below(6);
        let w: Vec<f64> = (0..n)
            .map(|_| (rng.below(levels) as f64 - levels as f64 / 2.0) * 0.5)
            .collect();
        let g: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64 - 2.0).collect();
        let bits: Vec<bool> = (0..n).map(|_| rng.uniform() < 0.6).collect();
        let k = rng.below(20);
        let p = k as f64 / 20.0;
        let mask = single_layer_mask(bits.clone());
        let wt = Tensor::new(vec![n], w.clone()).unwrap();
        let pruned = top_mag_prune(&[&wt], &mask, p).unwrap();
        let expect = brute_prune(&w, &bits, k, 20);
        if pruned.layer(0).bits() != expect.as_slice() {
            mismatches += 1;
            continue;
        }
        let count = mask.layer(0).active() - pruned.layer(0).active();
        let gt = Tensor::new(vec![n], g.clone()).unwrap();
        let grown = grow_gradient(&[&gt], &pruned, &[count]).unwrap();
        if grown.layer(0).bits() != brute_grow(&g, &expect, count).as_slice() {
            mismatches += 1;
        }
    }
    Check::new(
        format!("prune/grow match brute-force top-k on {instances} instances"),
        mismatches == 0,
        format!("{mismatches} mismatches"),
    )
}

/// S = 0 sparse runs replay the dense trajectory bit for bit.
pub fn dense_limit(steps: usize) -> Check {
    let run = |method: Method| {
        let config = small_config(method, 0.0, 0.0, 7, steps);
        let data = build_dataset(&config).unwrap();
        let mut t = Trainer::new(config.train_config(), &data, &Rng::new(11)).unwrap();
        t.run().unwrap();
        let out = t.finish();
        (out.log.step_losses, out.model.registry().clone())
    };
    let dense = run(Method::Dense);
    let mut detail = Vec::new();
    let mut ok = true;
    for m in [Method::Static, Method::RigL, Method::MagRan] {
        let (losses, reg) = run(m);
        let same = losses
            .iter()
            .map(|l| l.to_bits())
            .eq(dense.0.iter().map(|l| l.to_bits()))
            && reg == dense.1;
        ok &= same && losses.len() == steps;
        detail.push(format!("{m}: {}", if same { "identical" } else { "differs" }));
    }
    Check::new(
        format!("S=0, p=0 matches dense over {steps} steps"),
        ok,
        detail.join(", "),
    )
}

// Allocation ------------------------------------------------------------------

fn random_architecture(rng: &mut Rng, conv: bool) -> Vec<LayerGeom> {
    let depth = 2 + rng.below(5);
    let mut width = 1 + rng.below(64);
    let mut layers = Vec::new();
    for l in 0..depth {
        let next = 1 + rng.below(256);
        if conv && rng.below(2) == 0 {
            let k = [1, 3, 5][rng.below(3)];
            let side = 4 + rng.below(12);
            layers.push(LayerGeom::conv(format!("c{l}"), width, next, k, k, side, side));
        } else {
            layers.push(LayerGeom::dense(format!("d{l}"), width, next));
        }
        width = next;
    }
    layers
}

/// Global density and clamping against a bisection solver, over random
/// architectures and the standard S grid.
pub fn allocation_suite(architectures: usize) -> Vec<Check> {
    let grid = [0.1, 0.25, 0.5, 0.75, 0.9];
    let mut rng = Rng::new(2024);
    let (mut density_worst, mut solver_worst, mut rounding_bad, mut clamped_cases) = (0.0_f64, 0.0_f64, 0, 0);
    for a in 0..architectures {
        let layers = random_architecture(&mut rng, a % 2 == 1);
        let total: usize = layers.iter().map(LayerGeom::param_count).sum();
        let all_dense = layers
            .iter()
            .all(|l| matches!(l.kind, sdm_core::topology::LayerKind::DenseMatrix));
        for &s in &grid {
            let plan = if all_dense {
                allocate_er(&layers, s).unwrap()
            } else {
                allocate_erk(&layers, s).unwrap()
            };
            let target = (1.0 - s) * total as f64;
            let allocated: f64 = plan
                .densities
                .iter()
                .zip(&layers)
                .map(|(d, l)| d * l.param_count() as f64)
                .sum();
            density_worst = density_worst.max((allocated - target).abs() / total as f64);
            let counts: usize = plan.active_counts(&layers).iter().sum();
            if (counts as f64 - target).abs() > 0.5 * layers.len() as f64 + 1e-9 {
                rounding_bad += 1;
            }
            let reference = bisection_densities(&layers, s);
            if reference.iter().any(|&d| d >= 1.0) {
                clamped_cases += 1;
            }
            for (d, r) in plan.densities.iter().zip(&reference) {
                solver_worst = solver_worst.max((d - r).abs());
            }
        }
    }
    vec![
        Check::new(
            format!("allocated density equals 1-S on {architectures} architectures x 5 sparsities"),
            density_worst < 1e-9 && rounding_bad == 0,
            format!("worst density error {density_worst:.2e}, {rounding_bad} count totals outside rounding slack"),
        ),
        Check::new(
            "clamped layers match the bisection solver",
            solver_worst < 1e-9 && clamped_cases > 0,
            format!("worst density difference {solver_worst:.2e}; {clamped_cases} cases with clamped layers"),
        ),
    ]
}

// Cost accounting ---------------------------------------------------------------

/// Bias-free dense layers only, so every parameter is maskable.
pub fn fully_maskable_registry(rng: &mut Rng) -> ParamRegistry {
    let entries = (0..4)
        .map(|l| ParamEntry {
            layer_id: format!("fc{l}"),
            geom: LayerGeom::dense(format!("fc{l}"), 100, 100),
            weight: Tensor::gaussian(rng, &[100, 100]),
            bias: None,
            maskable: true,
        })
        .collect();
    ParamRegistry::new(entries).unwrap()
}

pub fn cost_suite() -> Vec<Check> {
    let mut checks = Vec::new();
    let mut rng = Rng::new(5);
    let registry = fully_maskable_registry(&mut rng);
    let geoms = registry.maskable_geoms();
    for (s, expected) in [(0.25, 0.75), (0.5, 0.50), (0.9, 0.10)] {
        let plan = allocate_er(&geoms, s).unwrap();
        let mask = sdm_core::topology::sample_mask(&plan, &geoms, &mut rng).unwrap();
        let ratio = params_report(&registry, &mask).unwrap().ratio;
        checks.push(Check::new(
            format!("params ratio at S={s} is {expected:.2}x"),
            ratio == expected,
            format!("{ratio}"),
        ));
    }

    let mut worst: f64 = 0.0;
    for spec in [DenoiserSpec::default_mlp(2), DenoiserSpec::default_conv()] {
        let model = Denoiser::init(spec, &mut rng).unwrap();
        let geoms = model.registry().maskable_geoms();
        for s in [0.1, 0.25, 0.5, 0.75, 0.9] {
            let plan = allocate_erk(&geoms, s).unwrap();
            let mask = sdm_core::topology::sample_mask(&plan, &geoms, &mut rng).unwrap();
            let (sparse, dense) = forward_flops(model.registry(), &mask).unwrap();
            let d = layer_densities(model.registry(), &mask).unwrap();
            let per_layer: Vec<f64> = model
                .registry()
                .geoms()
                .iter()
                .map(|g| sdm_core::metrics::layer_flops(g, 1.0))
                .collect();
            let num: f64 = d.iter().zip(&per_layer).map(|(d, f)| d * f).sum();
            let den: f64 = per_layer.iter().sum();
            worst = worst.max((sparse / dense - num / den).abs());
        }
    }
    checks.push(Check::new(
        "FLOPs ratio equals sum(d_l F_l)/sum(F_l)",
        worst < 1e-14,
        format!("worst deviation {worst:.1e}"),
    ));
    checks
}

// Diffusion core ---------------------------------------------------------------

pub fn op_gradient_checks() -> Vec<(String, f64)> {
    let mut rng = Rng::new(31);
    let mut r = |shape: &[usize]| Tensor::gaussian(&mut rng, shape);
    let mut out = Vec::new();
    let mut push = |name: &str, inputs: Vec<Tensor>, f: &dyn Fn(&mut Graph, &[Var]) -> sdm_core::Result<Var>| {
        let err = gradient_check(&inputs, f).unwrap();
        out.push((name.to_string(), err));
    };
    push("matmul", vec![r(&[3, 4]), r(&[4, 2])], &|g, v| {
        let y = g.matmul(v[0], v[1])?;
        Ok(g.sum(y))
    });
    push("add/sub/mul", vec![r(&[2, 3]), r(&[2, 3]), r(&[2, 3])], &|g, v| {
        let a = g.add(v[0], v[1])?;
        let b = g.sub(a, v[2])?;
        let c = g.mul(b, v[0])?;
        Ok(g.sum(c))
    });
    push("scale", vec![r(&[5])], &|g, v| {
        let y = g.scale(v[0], -1.7);
        let z = g.mul(y, v[0])?;
        Ok(g.sum(z))
    });
    push("silu", vec![r(&[3, 3])], &|g, v| {
        let y = g.silu(v[0]);
        let z = g.mul(y, y)?;
        Ok(g.sum(z))
    });
    push("relu", vec![r(&[4, 4])], &|g, v| {
        let y = g.relu(v[0]);
        let z = g.mul(y, v[0])?;
        Ok(g.sum(z))
    });
    push("add_bias", vec![r(&[3, 4]), r(&[4])], &|g, v| {
        let y = g.add_bias(v[0], v[1])?;
        let z = g.mul(y, y)?;
        Ok(g.sum(z))
    });
    push("add_channel", vec![r(&[2, 3, 2, 2]), r(&[2, 3])], &|g, v| {
        let y = g.add_channel(v[0], v[1])?;
        let z = g.mul(y, y)?;
        Ok(g.sum(z))
    });
    push("conv2d pad 1", vec![r(&[2, 2, 5, 5]), r(&[3, 2, 3, 3])], &|g, v| {
        let y = g.conv2d(v[0], v[1], 1, 1)?;
        let z = g.mul(y, y)?;
        Ok(g.sum(z))
    });
    push("conv2d stride 2", vec![r(&[1, 2, 6, 6]), r(&[2, 2, 3, 3])], &|g, v| {
        let y = g.conv2d(v[0], v[1], 2, 0)?;
        let z = g.mul(y, y)?;
        Ok(g.sum(z))
    });
    push("concat_cols", vec![r(&[3, 2]), r(&[3, 4])], &|g, v| {
        let y = g.concat_cols(v[0], v[1])?;
        let z = g.mul(y, y)?;
        Ok(g.sum(z))
    });
    push("mse", vec![r(&[4, 3]), r(&[4, 3])], &|g, v| g.mse(v[0], v[1]));
    out
}

/// Gradient of the denoising loss with respect to every parameter and the input.
pub fn denoiser_gradient_check(spec: DenoiserSpec) -> f64 {
    let mut rng = Rng::new(8);
    let model = Denoiser::init(spec.clone(), &mut rng).unwrap();
    let mut shape = vec![3];
    shape.extend(spec.sample_shape());
    let x = Tensor::gaussian(&mut rng, &shape);
    let target = Tensor::gaussian(&mut rng, &shape);
    let layout: Vec<bool> = model.registry().entries().iter().map(|e| e.bias.is_some()).collect();
    let mut inputs = vec![x];
    for e in model.registry().entries() {
        // Perturb zero-initialized biases so their gradients are generic.
        inputs.push(e.weight.clone());
        if let Some(b) = &e.bias {
            inputs.push(Tensor::gaussian(&mut rng, b.shape()).scale(0.1));
        }
    }
    let ts = [1, 250, 999];
    gradient_check(&inputs, |g, v| {
        let mut rest = v[1..].iter().copied();
        let vars = layout
            .iter()
            .map(|&has_bias| {
                let w = rest.next().expect("weight input");
                (w, if has_bias { rest.next() } else { None })
            })
            .collect();
        let params = BoundParams { vars };
        let out = model.forward(g, &params, v[0], &ts)?;
        let t = g.constant(target.clone());
        g.mse(out, t)
    })
    .unwrap()
}

pub fn diffusion_suite() -> Vec<Check> {
    let mut checks = Vec::new();
    let sched = linear_schedule(1e-4, 2e-2, 1000).unwrap();

    let mut prod = 1.0;
    let mut worst: f64 = 0.0;
    for t in 1..=1000 {
        prod *= 1.0 - sched.beta(t);
        worst = worst.max((sched.alpha_bar(t) - prod).abs() / prod);
    }
    checks.push(Check::new(
        "alpha_bar is the cumulative product of 1-beta",
        worst < 1e-12,
        format!("worst relative error {worst:.1e}"),
    ));

    // Closed-form x_t against an explicit t-step Markov chain.
    let (n, t, x0) = (100_000, 200, 1.5);
    let mut rng = Rng::new(12);
    let chain: Vec<f64> = (0..n)
        .map(|_| {
            let mut x = x0;
            for s in 1..=t {
                x = sched.alpha(s).sqrt() * x + sched.beta(s).sqrt() * rng.normal();
            }
            x
        })
        .collect();
    let eps = Tensor::gaussian(&mut rng, &[n, 1]);
    let direct = forward_noise(&Tensor::full(&[n, 1], x0), t, &eps, &sched).unwrap();
    let moments = |v: &[f64]| {
        let m = v.iter().sum::<f64>() / v.len() as f64;
        (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64)
    };
    let (mc, vc) = moments(&chain);
    let (md, vd) = moments(direct.values());
    let (m_true, v_true) = (sched.alpha_bar(t).sqrt() * x0, 1.0 - sched.alpha_bar(t));
    let rel = [mc / m_true, vc / v_true, md / m_true, vd / v_true]
        .iter()
        .map(|r| (r - 1.0).abs())
        .fold(0.0, f64::max);
    checks.push(Check::new(
        "forward noising composes like the Markov chain",
        rel < 0.02,
        format!("chain mean {mc:.4} var {vc:.4}, closed form mean {md:.4} var {vd:.4}, exact {m_true:.4}/{v_true:.4}"),
    ));

    let mut grads = op_gradient_checks();
    grads.push((
        "mlp denoiser".into(),
        denoiser_gradient_check(DenoiserSpec::Mlp {
            data_dim: 2,
            hidden: vec![6, 5],
            activation: sdm_core::models::Activation::Silu,
            time_dim: 4,
        }),
    ));
    grads.push((
        "conv denoiser".into(),
        denoiser_gradient_check(DenoiserSpec::Conv {
            channels: 1,
            height: 4,
            width: 4,
            hidden_channels: vec![2, 3],
            kernel: 3,
            activation: sdm_core::models::Activation::Silu,
            time_dim: 4,
        }),
    ));
    let worst = grads.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    let worst_name = grads
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .map(|g| g.0.clone())
        .unwrap();
    checks.push(Check::new(
        format!("{} gradient checks below 1e-4", grads.len()),
        worst < 1e-4,
        format!("worst {worst:.1e} ({worst_name})"),
    ));

    let model = Denoiser::init(DenoiserSpec::default_mlp(2), &mut Rng::new(3)).unwrap();
    let x_t = Tensor::gaussian(&mut Rng::new(4), &[16, 2]);
    let a = ddim_sample_from(&model, &sched, 50, 0.0, &mut Rng::new(1), x_t.clone()).unwrap();
    let b = ddim_sample_from(&model, &sched, 50, 0.0, &mut Rng::new(2), x_t).unwrap();
    checks.push(Check::new(
        "DDIM with eta=0 is deterministic",
        a == b,
        "same x_T and different rng streams give identical samples",
    ));

    // The exact noise predictor for a point mass at x*.
    let star = [0.7, -1.3];
    let s = sched.clone();
    let perfect = FnPredictor(move |x: &Tensor, ts: &[usize]| {
        let v: Vec<f64> = x
            .values()
            .iter()
            .enumerate()
            .map(|(i, &xv)| {
                let ab = s.alpha_bar(ts[i / 2]);
                (xv - ab.sqrt() * star[i % 2]) / (1.0 - ab).sqrt()
            })
            .collect();
        Tensor::new(x.shape().to_vec(), v)
    });
    let out = ddim_sample(&perfect, &sched, 50, 0.0, &mut Rng::new(9), &[32, 2]).unwrap();
    let err = out
        .values()
        .iter()
        .enumerate()
        .map(|(i, v)| (v - star[i % 2]).abs())
        .fold(0.0, f64::max);
    checks.push(Check::new(
        "perfect denoiser converges to the data point",
        err < 1e-3,
        format!("max deviation {err:.1e}"),
    ));
    checks
}

// Metrics ----------------------------------------------------------------------

pub fn metric_suite() -> Vec<Check> {
    let mut checks = Vec::new();
    let mut rng = Rng::new(21);
    let a: Vec<f64> = (0..2000).map(|_| rng.normal()).collect();
    let f0 = frechet_distance(&a, &a, 2).unwrap();
    checks.push(Check::new(
        "Fréchet of identical sets is 0",
        f0.abs() < 1e-9,
        format!("{f0:.1e}"),
    ));

    let x: Vec<f64> = (0..1000).map(|_| rng.normal()).collect();
    let m = x.iter().sum::<f64>() / 1000.0;
    let sd = (x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 1000.0).sqrt();
    let unit: Vec<f64> = x.iter().map(|v| (v - m) / sd).collect();
    let shifted: Vec<f64> = unit.iter().map(|v| v + 3.0).collect();
    let f9 = frechet_distance(&unit, &shifted, 1).unwrap();
    checks.push(Check::new(
        "1-D mean shift of 3 gives 9",
        (f9 - 9.0).abs() < 1e-9,
        format!("{f9}"),
    ));

    let n = 100_000;
    let p: Vec<f64> = (0..2 * n).map(|_| rng.normal()).collect();
    let q: Vec<f64> = (0..2 * n).map(|_| 2.0 * rng.normal()).collect();
    let f2 = frechet_distance(&p, &q, 2).unwrap();
    checks.push(Check::new(
        "N(0,I) vs N(0,4I) gives 2 within 5%",
        (f2 - 2.0).abs() < 0.1,
        format!("{f2:.4}"),
    ));

    let rows = |rng: &mut Rng, n: usize, shift: f64| -> Vec<Vec<f64>> {
        (0..n).map(|_| vec![rng.normal() + shift, rng.normal()]).collect()
    };
    let ra = rows(&mut rng, 20, 0.0);
    let rb = rows(&mut rng, 20, 0.5);
    let est = mmd2_unbiased(&flatten(&ra), &flatten(&rb), 2).unwrap();
    let brute = brute_mmd2(&ra, &rb);
    let self_est = kid_mmd(&flatten(&ra), &flatten(&ra), 2, 500).unwrap().value;
    let self_brute = brute_mmd2(&ra, &ra);
    let far_a: Vec<Vec<f64>> = vec![vec![0.0, 0.0]; 20];
    let far_b: Vec<Vec<f64>> = vec![vec![10.0, 0.0]; 20];
    let far = mmd2_unbiased(&flatten(&far_a), &flatten(&far_b), 2).unwrap();
    let far_brute = brute_mmd2(&far_a, &far_b);
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * y.abs().max(1.0);
    checks.push(Check::new(
        "KID equals the brute-force double sum at n=20",
        close(est, brute) && close(self_est, self_brute) && close(far, far_brute) && far > 100.0,
        format!("{est:.6} vs {brute:.6}; self {self_est:.6}; point masses {far:.1}"),
    ));

    let na = rows(&mut rng, 1000, 0.0);
    let nb = rows(&mut rng, 1000, 0.0);
    let kid = kid_mmd(&flatten(&na), &flatten(&nb), 2, 100).unwrap();
    checks.push(Check::new(
        "KID of same-distribution draws within 3 SE of 0",
        kid.value.abs() < 3.0 * kid.std_error,
        format!("{:.2e} ± {:.2e} over {} blocks", kid.value, kid.std_error, kid.blocks),
    ));
    checks
}

// Infrastructure -------------------------------------------------------------------

pub fn checkpoint_round_trip() -> Check {
    let config = small_config(Method::RigL, 0.5, 0.3, 5, 20);
    let data = build_dataset(&config).unwrap();
    let mut t = Trainer::new(config.train_config(), &data, &Rng::new(config.seed)).unwrap();
    t.run().unwrap();
    let ckpt = Checkpoint {
        config: config.clone(),
        standardization: data.standardization().clone(),
        model: t.model().clone(),
        mask: t.mask().cloned(),
        optimizer: t.optimizer().clone(),
    };
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.sdmc"), dir.path().join("b.sdmc"));
    ckpt.save(&p1).unwrap();
    let loaded = Checkpoint::load(&p1).unwrap();
    loaded.save(&p2).unwrap();
    let (b1, b2) = (std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    Check::new(
        "checkpoint save/load/save is byte-identical",
        b1 == b2 && loaded == ckpt,
        format!("{} bytes", b1.len()),
    )
}

/// Stops at `split`, round-trips through checkpoint bytes, and compares the
/// next loss and the end state with an uninterrupted run.
pub fn resume_equivalence(method: Method, split: usize) -> Check {
    let sparsity = if method == Method::Dense { 0.0 } else { 0.6 };
    let config = small_config(method, sparsity, 0.3, 4, split + 10);
    let data = build_dataset(&config).unwrap();
    let rng = Rng::new(config.seed);
    let mut full = Trainer::new(config.train_config(), &data, &rng).unwrap();
    full.run_until(split + 1).unwrap();
    let next_full = *full.log().step_losses.last().unwrap();

    let mut first = Trainer::new(config.train_config(), &data, &rng).unwrap();
    first.run_until(split).unwrap();
    let bytes = Checkpoint {
        config: config.clone(),
        standardization: data.standardization().clone(),
        model: first.model().clone(),
        mask: first.mask().cloned(),
        optimizer: first.optimizer().clone(),
    }
    .to_bytes()
    .unwrap();
    let ckpt = Checkpoint::from_bytes(&bytes).unwrap();
    let mut resumed = resume_trainer(&ckpt, &data).unwrap();
    let next_resumed = resumed.step().unwrap();
    full.run().unwrap();
    resumed.run().unwrap();
    let same_end = full.model() == resumed.model() && full.mask() == resumed.mask();
    let diff = (next_full - next_resumed).abs();
    Check::new(
        format!("{method} resumed at step {split} matches the uninterrupted run"),
        diff <= 1e-12 && same_end,
        format!(
            "next-step loss difference {diff:.1e}, final state {}",
            if same_end { "identical" } else { "differs" }
        ),
    )
}

pub fn dataset_balance() -> Check {
    let d = make_dataset(DatasetKind::Gauss8, 8000, &mut Rng::new(0)).unwrap();
    let modes = DatasetKind::gauss8_modes();
    let mut counts = [0usize; 8];
    for p in d.raw().chunks(2) {
        let k = (0..8)
            .min_by(|&a, &b| {
                let da = (p[0] - modes[a][0]).powi(2) + (p[1] - modes[a][1]).powi(2);
                let db = (p[0] - modes[b][0]).powi(2) + (p[1] - modes[b][1]).powi(2);
                da.total_cmp(&db)
            })
            .unwrap();
        counts[k] += 1;
    }
    Check::new(
        "gauss8 has 1000 points per mode within 5%",
        counts.iter().all(|&c| (950..=1050).contains(&c)),
        format!("{counts:?}"),
    )
}
