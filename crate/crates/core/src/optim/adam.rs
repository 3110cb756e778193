use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Bias-corrected Adam moments for a set of named parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub step: u64,
    pub first: ParamStore<T>,
    pub second: ParamStore<T>,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments shaped like `params`.
    pub fn new(params: &ParamStore<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || -> ParamStore<T> {
            params
                .iter()
                .map(|(k, v)| (k.clone(), Tensor::zeros(v.shape())))
                .collect()
        };
        AdamState {
            beta1,
            beta2,
            eps,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    /// One update of every parameter in place. `grads` must hold an entry of
    /// matching shape for each parameter.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &ParamStore<T>, lr: f64) -> Result<()> {
        if !(lr >= 0.0) {
            return Err(Error::contract("adam_step", format!("learning rate must be non-negative, got {lr}")));
        }
        for (name, p) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::shape("adam_step", format!("no gradient for {name}")))?;
            let m = self
                .first
                .get(name)
                .ok_or_else(|| Error::shape("adam_step", format!("no moment for {name}")))?;
            for (what, s) in [("gradient", g.shape()), ("moment", m.shape())] {
                if s != p.shape() {
                    return Err(Error::shape(
                        "adam_step",
                        format!("{what} of {name} has shape {s}, parameter has {}", p.shape()),
                    ));
                }
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (name, p) in params.iter_mut() {
            let g = grads[name].data();
            let m = self.first.get_mut(name).expect("checked").data_mut();
            let v = self.second.get_mut(name).expect("checked").data_mut();
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gf = g.as_f64();
                let mf = b1 * m.as_f64() + (1.0 - b1) * gf;
                let vf = b2 * v.as_f64() + (1.0 - b2) * gf * gf;
                *m = T::of(mf);
                *v = T::of(vf);
                let update = lr * (mf / c1) / ((vf / c2).sqrt() + eps);
                *p = T::of(p.as_f64() - update);
            }
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step<T: Scalar>(
    params: &mut ParamStore<T>,
    grads: &ParamStore<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    state.step(params, grads, lr)
}
