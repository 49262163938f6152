use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::nn::{ParamGroup, ParamStore};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let unit = |b: f64| (0.0..1.0).contains(&b);
        if !unit(self.beta1) || !unit(self.beta2) || !(self.eps > 0.0) {
            return Err(Error::config(format!(
                "adam needs betas in [0, 1) and eps > 0, got {} {} {}",
                self.beta1, self.beta2, self.eps
            )));
        }
        Ok(())
    }
}

/// First and second moment estimates, keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState<T> {
    pub m: IndexMap<String, Tensor<T>>,
    pub v: IndexMap<String, Tensor<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new() -> Self {
        Self {
            m: IndexMap::new(),
            v: IndexMap::new(),
        }
    }

    /// Zero moments for every trainable parameter.
    pub fn for_params(store: &ParamStore<T>) -> Self {
        let mut s = Self::new();
        for (name, p) in store.iter().filter(|(_, p)| !p.frozen) {
            s.m.insert(name.to_string(), Tensor::zeros(p.tensor.dims()));
            s.v.insert(name.to_string(), Tensor::zeros(p.tensor.dims()));
        }
        s
    }
}

/// One bias-corrected update of a single tensor; `step` counts from 1.
pub fn adam_update<T: Real>(
    param: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    lr: f64,
    cfg: &AdamConfig,
    step: u64,
) {
    let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
    let c1 = T::lit(1.0 - cfg.beta1.powf(step as f64));
    let c2 = T::lit(1.0 - cfg.beta2.powf(step as f64));
    let (lr, eps, one) = (T::lit(lr), T::lit(cfg.eps), T::one());
    for i in 0..param.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (one - b1) * g;
        v[i] = b2 * v[i] + (one - b2) * g * g;
        let m_hat = m[i] / c1;
        let v_hat = v[i] / c2;
        param[i] = param[i] - lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Applies one Adam step to every parameter in `grads`. `lr` gives the rate
/// of each group. Gradients for frozen or unknown parameters are rejected
/// before anything is modified.
pub fn adam_step<T: Real>(
    store: &mut ParamStore<T>,
    grads: &IndexMap<String, Tensor<T>>,
    state: &mut AdamState<T>,
    lr: impl Fn(ParamGroup) -> f64,
    cfg: &AdamConfig,
    step: u64,
) -> Result<()> {
    if step == 0 {
        return Err(Error::Usage("adam steps are counted from 1".into()));
    }
    for (name, g) in grads {
        let p = store
            .get(name)
            .map_err(|_| Error::Usage(format!("gradient for unknown parameter {name}")))?;
        if p.frozen {
            return Err(Error::Usage(format!("gradient for frozen parameter {name}")));
        }
        if p.tensor.dims() != g.dims() {
            return Err(Error::shape(format!(
                "gradient for {name} is {:?}, parameter is {:?}",
                g.dims(),
                p.tensor.dims()
            )));
        }
    }
    for (name, g) in grads {
        let p = store.get_mut(name)?;
        let rate = lr(p.group);
        let m = state.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.dims()));
        let v = state.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.dims()));
        adam_update(
            p.tensor.data_mut(),
            g.data(),
            m.data_mut(),
            v.data_mut(),
            rate,
            cfg,
            step,
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = vec![1.5f64, -2.0];
        let (mut m, mut v) = (vec![0.0; 2], vec![0.0; 2]);
        adam_update(&mut p, &[0.0, 0.0], &mut m, &mut v, 0.1, &AdamConfig::default(), 1);
        assert_eq!(p, vec![1.5, -2.0]);
    }

    #[test]
    fn constant_gradient_approaches_lr_sign() {
        let cfg = AdamConfig::default();
        let mut p = vec![0.0f64];
        let (mut m, mut v) = (vec![0.0], vec![0.0]);
        let mut last = 0.0;
        for t in 1..=200 {
            let before = p[0];
            adam_update(&mut p, &[-3.0], &mut m, &mut v, 1e-3, &cfg, t);
            last = p[0] - before;
        }
        assert!((last - 1e-3).abs() < 1e-9, "{last}");
    }
}
