//! The finite-difference suite: every differentiable operation, the two
//! block types and a whole network with the training loss, in f64.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::autodiff::{
    directional_check, grad_check_many, relative_error, CheckStatus, GradCheckOptions, GradCheckReport, Graph, Tape,
    Var,
};
use crate::error::Result;
use crate::model::{erb_forward, feb_forward, ModelConfig, Network};
use crate::signal::{freq_loss_on, total_loss_on};
use crate::tensor::Tensor;

/// Outcome of one named check.
#[derive(Debug, Clone, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    #[serde(serialize_with = "status_str")]
    pub status: CheckStatus,
    pub max_rel_error: f64,
    pub probes: usize,
}

fn status_str<S: serde::Serializer>(s: &CheckStatus, ser: S) -> std::result::Result<S::Ok, S::Error> {
    ser.serialize_str(match s {
        CheckStatus::Passed => "passed",
        CheckStatus::Failed => "failed",
        CheckStatus::Degenerate => "degenerate",
    })
}

impl SuiteEntry {
    fn from_report(name: impl Into<String>, r: &GradCheckReport) -> Self {
        SuiteEntry {
            name: name.into(),
            status: r.status,
            max_rel_error: r.max_rel_error,
            probes: r.elements.len(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Passed
    }
}

fn uniform(shape: [usize; 4], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| rng.gen_range(lo..hi))
}

/// Values with magnitude in `[0.2, 1)` and random sign, clear of the kink of
/// absolute-value losses.
fn away_from_zero(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_, _, _, _| {
        let m = rng.gen_range(0.2..1.0);
        if rng.gen::<bool>() {
            m
        } else {
            -m
        }
    })
}

/// Sum of the output weighted by a fixed random tensor, so every output
/// element gets a distinct upstream gradient.
fn project(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = uniform(tape.get(y).shape().dims(), -1.0, 1.0, &mut rng);
    let w = tape.constant(w);
    let prod = tape.mul(&y, &w)?;
    Ok(tape.sum(prod))
}

/// Finite-difference checks of every primitive on inputs no larger than
/// `(2, 8, 8, 8)`.
pub fn op_suite(seed: u64, opts: GradCheckOptions) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut add = |name: &str, r: GradCheckReport| out.push(SuiteEntry::from_report(name, &r));

    for (dil, k) in [(1, 3), (4, 3), (1, 1)] {
        let x = uniform([2, 4, 8, 8], -1.0, 1.0, &mut rng);
        let w = uniform([3, 4, k, k], -0.5, 0.5, &mut rng);
        let b = uniform([1, 3, 1, 1], -0.5, 0.5, &mut rng);
        let pad = if k == 3 { dil } else { 0 };
        let r = grad_check_many(
            |t, v| {
                let y = t.conv2d(&v[0], &v[1], Some(&v[2]), dil, pad)?;
                project(t, y, 1)
            },
            &[("x", &x), ("weight", &w), ("bias", &b)],
            opts,
        )?;
        add(&format!("conv2d {k}x{k} dilation {dil}"), r);
    }

    let x = uniform([2, 8, 3, 4], -1.0, 1.0, &mut rng);
    let r = grad_check_many(
        |t, v| {
            let y = t.pixel_shuffle(&v[0], 2)?;
            project(t, y, 2)
        },
        &[("x", &x)],
        opts,
    )?;
    add("pixel_shuffle", r);

    let x = uniform([2, 8, 4, 4], -1.0, 1.0, &mut rng);
    let gain = uniform([1, 8, 1, 1], 0.5, 1.5, &mut rng);
    let shift = uniform([1, 8, 1, 1], -0.5, 0.5, &mut rng);
    let r = grad_check_many(
        |t, v| {
            let y = t.layer_norm(&v[0], &v[1], &v[2])?;
            project(t, y, 3)
        },
        &[("x", &x), ("gain", &gain), ("shift", &shift)],
        opts,
    )?;
    add("layer_norm", r);

    let x = uniform([2, 3, 4, 4], -3.0, 3.0, &mut rng);
    let r = grad_check_many(
        |t, v| {
            let y = t.silu(&v[0]);
            project(t, y, 4)
        },
        &[("x", &x)],
        opts,
    )?;
    add("silu", r);
    let r = grad_check_many(
        |t, v| {
            let y = t.sigmoid(&v[0]);
            project(t, y, 5)
        },
        &[("x", &x)],
        opts,
    )?;
    add("sigmoid", r);

    let a = uniform([1, 2, 4, 4], -1.0, 1.0, &mut rng);
    let b = uniform([1, 4, 4, 4], -1.0, 1.0, &mut rng);
    let r = grad_check_many(
        |t, v| {
            let cat = t.concat(&[v[0], v[1]])?;
            let parts = t.chunk(&cat, 3)?;
            let m = t.mul(&parts[0], &parts[2])?;
            let s = t.add(&m, &parts[1])?;
            project(t, s, 6)
        },
        &[("a", &a), ("b", &b)],
        opts,
    )?;
    add("concat / chunk / add / mul", r);

    let x = away_from_zero([2, 3, 4, 4], &mut rng);
    let r = grad_check_many(|t, v| Ok(t.mean_abs(v[0])), &[("x", &x)], opts)?;
    add("mean_abs", r);

    let sr = uniform([2, 3, 8, 8], 0.0, 1.0, &mut rng);
    let hr = sr.zip_map(&away_from_zero([2, 3, 8, 8], &mut rng), "suite", |a, b| a + b)?;
    let r = grad_check_many(
        |t, v| {
            let h = t.constant(hr.clone());
            freq_loss_on(t, v[0], h)
        },
        &[("sr", &sr)],
        opts,
    )?;
    add("freq_loss", r);
    let r = grad_check_many(
        |t, v| {
            let h = t.constant(hr.clone());
            total_loss_on(t, v[0], h, 0.05)
        },
        &[("sr", &sr)],
        opts,
    )?;
    add("total_loss", r);
    Ok(out)
}

/// A network whose biases and norm parameters are moved off their
/// initial values, so every parameter path is exercised.
pub fn perturbed_network(cfg: ModelConfig, seed: u64) -> Result<Network<f64>> {
    let mut net = Network::<f64>::build(cfg, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xB1A5);
    for (name, t) in net.params_mut() {
        if name.ends_with(".bias") || name.ends_with(".shift") || name.ends_with(".gain") {
            t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
        }
    }
    Ok(net)
}

/// Checks of one FEB and one ERB, with respect to the block input and
/// every block parameter.
pub fn block_suite(cfg: &ModelConfig, seed: u64, opts: GradCheckOptions) -> Result<Vec<SuiteEntry>> {
    let net = perturbed_network(cfg.clone(), seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = uniform([1, cfg.channels, 8, 8], -1.0, 1.0, &mut rng);
    let mut out = Vec::new();
    for which in ["feb", "erb"] {
        let prefix = format!("blocks.0.{which}.");
        let names: Vec<&String> = net.params().keys().filter(|k| k.starts_with(&prefix)).collect();
        let mut inputs: Vec<(&str, &Tensor<f64>)> = vec![("x", &x)];
        inputs.extend(names.iter().map(|n| (n.as_str(), &net.params()[*n])));
        let r = grad_check_many(
            |t, v| {
                for (n, &var) in names.iter().zip(&v[1..]) {
                    t.bind_param(n, var)?;
                }
                let y = if which == "feb" {
                    feb_forward(t, cfg, net.params(), 0, &v[0])?
                } else {
                    erb_forward(t, cfg, net.params(), 0, &v[0])?
                };
                project(t, y, 7)
            },
            &inputs,
            opts,
        )?;
        out.push(SuiteEntry::from_report(format!("{which} block"), &r));
    }
    Ok(out)
}

/// How much of a whole network to probe.
#[derive(Debug, Clone, Copy)]
pub struct ModelCheckOptions {
    pub batch: usize,
    /// LR side of the input.
    pub side: usize,
    pub lambda: f64,
    /// Elements probed per parameter tensor (and for the input).
    pub per_tensor: usize,
    pub seed: u64,
    pub step: f64,
    pub tol: f64,
}

impl Default for ModelCheckOptions {
    fn default() -> Self {
        ModelCheckOptions {
            batch: 1,
            side: 8,
            lambda: 0.05,
            per_tensor: 2,
            seed: 0,
            step: 1e-4,
            tol: 1e-4,
        }
    }
}

/// Whole network plus the training loss. Probes sampled elements of every
/// parameter tensor and of the input, then checks one random direction
/// through all parameters at once. The target sits at least 0.2 away from
/// the initial prediction everywhere so the L1 terms stay differentiable
/// across the probe steps.
pub fn model_check(cfg: &ModelConfig, o: ModelCheckOptions) -> Result<Vec<SuiteEntry>> {
    let net = perturbed_network(cfg.clone(), o.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(o.seed ^ 0xC0DE);
    let x = uniform([o.batch, 3, o.side, o.side], 0.0, 1.0, &mut rng);
    let sr0 = net.infer(&x)?;
    let target = sr0.zip_map(&away_from_zero(sr0.shape().dims(), &mut rng), "model_check", |a, b| a + b)?;
    let names: Vec<&String> = net.params().keys().collect();
    let f = |t: &mut Tape<f64>, v: &[Var]| -> Result<Var> {
        for (n, &var) in names.iter().zip(&v[1..]) {
            t.bind_param(n, var)?;
        }
        let sr = net.forward(t, &v[0])?;
        let hr = t.constant(target.clone());
        total_loss_on(t, sr, hr, o.lambda)
    };
    let mut inputs: Vec<(&str, &Tensor<f64>)> = vec![("input", &x)];
    inputs.extend(names.iter().map(|n| (n.as_str(), &net.params()[*n])));
    let opts = GradCheckOptions {
        step: o.step,
        tol: o.tol,
        max_elements: Some(o.per_tensor),
        seed: o.seed,
    };
    let report = grad_check_many(f, &inputs, opts)?;
    let mut out = vec![SuiteEntry::from_report(
        format!("network elements ({} tensors)", inputs.len()),
        &report,
    )];

    let dirs: Vec<Tensor<f64>> = inputs
        .iter()
        .map(|(_, t)| uniform(t.shape().dims(), -1.0, 1.0, &mut rng))
        .collect();
    // A smaller step: the direction moves every parameter at once.
    let (a, n) = directional_check(f, &inputs, &dirs, o.step * 0.1)?;
    let err = relative_error(a, n);
    out.push(SuiteEntry {
        name: "network direction (all parameters)".into(),
        status: if err <= o.tol {
            CheckStatus::Passed
        } else {
            CheckStatus::Failed
        },
        max_rel_error: err,
        probes: 1,
    });
    Ok(out)
}
