//! Adam with bias correction.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
struct Moments<T> {
    m: Tensor<T>,
    v: Tensor<T>,
}

/// First and second moments per named parameter, plus the shared step count.
#[derive(Clone, Debug, Default)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    step: u64,
    moments: HashMap<String, Moments<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            moments: HashMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.moments.get(name).map(|m| &m.m)
    }

    pub fn second_moment(&self, name: &str) -> Option<&Tensor<T>> {
        self.moments.get(name).map(|m| &m.v)
    }
}

/// One Adam update of every `(name, parameter)` pair from the gradient of the
/// same name. Nothing is modified unless every gradient is present, shaped
/// like its parameter and finite.
pub fn adam_step<'a, T, I, G>(params: I, grads: G, state: &mut AdamState<T>, lr: f64) -> Result<()>
where
    T: Scalar,
    I: IntoIterator<Item = (String, &'a mut Tensor<T>)>,
    G: Fn(&str) -> Option<&'a Tensor<T>>,
{
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(Error::invalid(format!("learning rate {lr}")));
    }
    let mut pairs = Vec::new();
    for (name, p) in params {
        let g = grads(&name).ok_or_else(|| Error::invalid(format!("no gradient for {name}")))?;
        if g.shape() != p.shape() {
            return Err(Error::shape(format!(
                "gradient {:?} for {name} does not match parameter {:?}",
                g.shape(),
                p.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::NonFinite(format!("gradient of {name}")));
        }
        pairs.push((name, p, g));
    }

    state.step += 1;
    let AdamConfig { beta1, beta2, epsilon } = state.config;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    for (name, p, g) in pairs {
        let mom = state.moments.entry(name).or_insert_with(|| Moments {
            m: Tensor::zeros_like(p),
            v: Tensor::zeros_like(p),
        });
        let (m, v) = (mom.m.data_mut(), mom.v.data_mut());
        for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            let gf = gi.to_f64_lossy();
            let mf = beta1 * mi.to_f64_lossy() + (1.0 - beta1) * gf;
            let vf = beta2 * vi.to_f64_lossy() + (1.0 - beta2) * gf * gf;
            *mi = T::from_f64_lossy(mf);
            *vi = T::from_f64_lossy(vf);
            let update = lr * (mf / c1) / ((vf / c2).sqrt() + epsilon);
            *pi = T::from_f64_lossy(pi.to_f64_lossy() - update);
        }
    }
    Ok(())
}
