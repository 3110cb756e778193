//! Finite-difference verification of tape gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::tape::{Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CheckStatus {
    Passed,
    Failed,
    /// The function is singular at the probe point (a layer norm saw zero
    /// variance), so finite differences are meaningless there.
    Degenerate,
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Bound on the relative error of every probed element.
    pub tol: f64,
    /// Probe at most this many elements per tensor (all when `None`).
    pub max_elements: Option<usize>,
    /// Seed for choosing probed elements.
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-4,
            tol: 1e-4,
            max_elements: None,
            seed: 0,
        }
    }
}

/// One probed element.
#[derive(Debug, Clone)]
pub struct ElementCheck {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    /// `|analytic - numeric| / max(1, |analytic|, |numeric|)`
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub status: CheckStatus,
    pub max_rel_error: f64,
    pub elements: Vec<ElementCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.status == CheckStatus::Passed
    }

    pub fn worst(&self) -> Option<&ElementCheck> {
        self.elements
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1f64.max(analytic.abs()).max(numeric.abs())
}

/// Checks the gradient of the scalar `f` with respect to a single tensor.
pub fn grad_check<F>(f: F, input: &Tensor<f64>, tol: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, Var) -> Result<Var>,
{
    let opts = GradCheckOptions {
        tol,
        ..Default::default()
    };
    grad_check_many(
        |tape, vars| f(tape, vars[0]),
        &[("input", input)],
        opts,
    )
}

/// Checks the gradient of the scalar `f` with respect to several named
/// tensors, probing each by central differences.
pub fn grad_check_many<F>(f: F, inputs: &[(&str, &Tensor<f64>)], opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<(Tape<f64>, Var, Vec<Var>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.leaf(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, out, vars))
    };

    let base: Vec<Tensor<f64>> = inputs.iter().map(|(_, t)| (*t).clone()).collect();
    let (tape, out, vars) = eval(&base)?;
    if tape.is_degenerate() {
        return Ok(GradCheckReport {
            status: CheckStatus::Degenerate,
            max_rel_error: 0.0,
            elements: Vec::new(),
        });
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor<f64>> = vars.iter().map(|&v| grads.wrt(v)).collect();
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut elements = Vec::new();
    let mut probe = base.clone();
    for (k, (name, t)) in inputs.iter().enumerate() {
        let n = t.numel();
        let mut idx: Vec<usize> = match opts.max_elements {
            Some(m) if m < n => sample(&mut rng, n, m).into_vec(),
            _ => (0..n).collect(),
        };
        idx.sort_unstable();
        for i in idx {
            let orig = probe[k].data()[i];
            probe[k].data_mut()[i] = orig + opts.step;
            let plus = {
                let (tape, out, _) = eval(&probe)?;
                tape.get(out).data()[0]
            };
            probe[k].data_mut()[i] = orig - opts.step;
            let minus = {
                let (tape, out, _) = eval(&probe)?;
                tape.get(out).data()[0]
            };
            probe[k].data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.step);
            let a = analytic[k].data()[i];
            elements.push(ElementCheck {
                tensor: name.to_string(),
                index: i,
                analytic: a,
                numeric,
                rel_error: relative_error(a, numeric),
            });
        }
    }
    let max_rel_error = elements.iter().map(|e| e.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        status: if max_rel_error <= opts.tol {
            CheckStatus::Passed
        } else {
            CheckStatus::Failed
        },
        max_rel_error,
        elements,
    })
}

/// Compares the analytic directional derivative along `directions` with a
/// central difference of `f` along the same combined direction. Covers every
/// element at the cost of two extra evaluations.
pub fn directional_check<F>(
    f: F,
    inputs: &[(&str, &Tensor<f64>)],
    directions: &[Tensor<f64>],
    step: f64,
) -> Result<(f64, f64)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |offset: f64| -> Result<(Tape<f64>, Var, Vec<Var>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs
            .iter()
            .zip(directions)
            .map(|((_, t), d)| {
                let moved = t.zip_map(d, "directional_check", |a, b| a + offset * b).expect("direction shape");
                tape.leaf(moved)
            })
            .collect();
        let out = f(&mut tape, &vars)?;
        Ok((tape, out, vars))
    };
    let (tape, out, vars) = eval(0.0)?;
    let grads = tape.backward(out)?;
    let analytic: f64 = vars
        .iter()
        .zip(directions)
        .map(|(&v, d)| grads.wrt(v).data().iter().zip(d.data()).map(|(g, x)| g * x).sum::<f64>())
        .sum();
    let value = |o: f64| -> Result<f64> {
        let (t, out, _) = eval(o)?;
        Ok(t.get(out).data()[0])
    };
    let numeric = (value(step)? - value(-step)?) / (2.0 * step);
    Ok((analytic, numeric))
}
