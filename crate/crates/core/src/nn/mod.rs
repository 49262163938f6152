//! Named parameters and the network's building blocks.

mod blocks;

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::ops::BnAffine;
use crate::tensor::{Backend, ConvSpec, Real, Tensor};

pub use blocks::{Afb, Bottleneck, Crb, ResStage, Stem, ALLOWED_DILATIONS};

/// Epsilon used by every frozen batch norm in the network.
pub const BN_EPS: f64 = 1e-5;

/// Which learning-rate schedule a parameter follows.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Feature extractor (stem and residual stages).
    Extractor,
    /// Depth decoder (reduce/fuse blocks and the prediction head).
    Decoder,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub tensor: Tensor<T>,
    pub frozen: bool,
    pub group: ParamGroup,
}

/// Network parameters addressed by unique dotted names, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    params: IndexMap<String, Param<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, param: Param<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::config(format!("duplicate parameter name {name}")));
        }
        self.params.insert(name, param);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Param<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Param<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::config(format!("unknown parameter {name}")))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor<T>> {
        self.get(name).map(|p| &p.tensor)
    }

    pub fn tensor_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.get_mut(name).map(|p| &mut p.tensor)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar values across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.tensor.len()).sum()
    }

    pub fn trainable_names(&self) -> impl Iterator<Item = &str> {
        self.iter().filter(|(_, p)| !p.frozen).map(|(n, _)| n)
    }

    /// Freezes every parameter whose name starts with `prefix`.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.frozen = true;
            }
        }
    }

    /// Binds a stored parameter on a backend; frozen ones enter as constants.
    pub fn bind<B: Backend<T>>(&self, backend: &mut B, name: &str) -> Result<B::Value> {
        let p = self.get(name)?;
        Ok(backend.parameter(name, &p.tensor, !p.frozen))
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            tensor: p.tensor.cast(),
                            frozen: p.frozen,
                            group: p.group,
                        },
                    )
                })
                .collect(),
        }
    }
}

/// Weight initialization scheme for convolution kernels.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WeightInit {
    /// Normal with std `sqrt(2 / fan_in)`.
    He,
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))`.
    Xavier,
}

/// Seeded source of initial parameter values. Tensors draw from one stream
/// in registration order, so a seed fixes every value.
#[derive(Debug)]
pub struct Initializer {
    rng: ChaCha8Rng,
    pub scheme: WeightInit,
    pub group: ParamGroup,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            scheme: WeightInit::He,
            group: ParamGroup::Extractor,
        }
    }

    pub fn with(mut self, scheme: WeightInit, group: ParamGroup) -> Self {
        self.scheme = scheme;
        self.group = group;
        self
    }

    pub fn set(&mut self, scheme: WeightInit, group: ParamGroup) {
        self.scheme = scheme;
        self.group = group;
    }

    fn weights<T: Real>(&mut self, spec: &ConvSpec) -> Tensor<T> {
        let field = spec.kernel_h * spec.kernel_w;
        let fan_in = (spec.in_channels * field) as f64;
        let fan_out = (spec.out_channels * field) as f64;
        match self.scheme {
            WeightInit::He => Tensor::normal(spec.weight_dims(), (2.0 / fan_in).sqrt(), &mut self.rng),
            WeightInit::Xavier => {
                let a = (6.0 / (fan_in + fan_out)).sqrt();
                Tensor::uniform(spec.weight_dims(), -a, a, &mut self.rng)
            }
        }
    }

    fn param<T: Real>(&self, tensor: Tensor<T>, frozen: bool) -> Param<T> {
        Param {
            tensor,
            frozen,
            group: self.group,
        }
    }
}

/// A convolution with `<name>.weight` and `<name>.bias` parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub name: String,
    pub spec: ConvSpec,
}

impl ConvLayer {
    pub fn new(name: impl Into<String>, spec: ConvSpec) -> Self {
        Self {
            name: name.into(),
            spec,
        }
    }

    pub fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Initializer) -> Result<()> {
        self.spec.validate()?;
        let w = init.weights(&self.spec);
        store.insert(self.weight_name(), init.param(w, false))?;
        store.insert(
            self.bias_name(),
            init.param(Tensor::zeros([self.spec.out_channels]), false),
        )
    }

    pub fn forward<T: Real, B: Backend<T>>(&self, b: &mut B, store: &ParamStore<T>, x: &B::Value) -> Result<B::Value> {
        let w = store.bind(b, &self.weight_name())?;
        let bias = store.bind(b, &self.bias_name())?;
        b.conv2d(x, &w, &bias, &self.spec)
    }
}

/// Batch norm over stored statistics; its four tensors are always frozen.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenBn {
    pub name: String,
    pub channels: usize,
}

impl FrozenBn {
    pub const STATS: [&'static str; 4] = ["gamma", "beta", "mean", "var"];

    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            channels,
        }
    }

    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Initializer) -> Result<()> {
        for (stat, value) in Self::STATS.iter().zip([1.0, 0.0, 0.0, 1.0]) {
            let t = Tensor::full([self.channels], T::lit(value));
            store.insert(format!("{}.{stat}", self.name), init.param(t, true))?;
        }
        Ok(())
    }

    pub fn affine<T: Real>(&self, store: &ParamStore<T>) -> Result<BnAffine<T>> {
        let get = |stat: &str| store.tensor(&format!("{}.{stat}", self.name));
        BnAffine::from_stats(get("gamma")?, get("beta")?, get("mean")?, get("var")?, T::lit(BN_EPS))
    }

    pub fn forward<T: Real, B: Backend<T>>(&self, b: &mut B, store: &ParamStore<T>, x: &B::Value) -> Result<B::Value> {
        let bn = self.affine(store)?;
        b.batchnorm_frozen(x, &bn)
    }
}
