//! Central finite-difference checks of every differentiable primitive and block, in f64.
//!
//! Each probe output `y` is reduced to `L = Σ r ⊙ y` with fixed random `r`, so the
//! upstream gradient differs per element and the reduction adds no curvature. Analytic gradients of `L` from the tape are
//! compared with `(L(θ + ε) − L(θ − ε)) / 2ε` on randomly chosen coordinates of every
//! input and trainable parameter.

use std::fmt;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::net::{Network, NetworkConfig, Preset, DILATION_RATES};
use crate::nn::{Afb, Bottleneck, Crb, Initializer, ParamStore, Stem, BN_EPS};
use crate::tensor::ops::BnAffine;
use crate::tensor::{Backend, ConvSpec, Eager, Graph, Padding, Tensor};

/// Largest accepted relative error.
pub const REL_TOL: f64 = 1e-4;
/// Denominator floor of the relative error, so near-zero gradients are
/// compared absolutely.
pub const REL_FLOOR: f64 = 1e-4;
/// Step for smooth probes.
pub const EPS_SMOOTH: f64 = 1e-3;
/// Step for probes with relu or max-pool kinks.
pub const EPS_KINKED: f64 = 1e-5;
/// One-sided differences disagreeing by more than this (relative) mean the
/// step straddles a kink; the difference is then retaken with a step ten
/// times smaller.
pub const KINK_DISAGREEMENT: f64 = 1e-3;

/// Central difference of `f` around 0. For kinked probes the two one-sided
/// differences are compared first to detect a crossing.
fn difference(kinked: bool, mut f: impl FnMut(f64) -> Result<f64>) -> Result<f64> {
    if !kinked {
        return Ok((f(EPS_SMOOTH)? - f(-EPS_SMOOTH)?) / (2.0 * EPS_SMOOTH));
    }
    let center = f(0.0)?;
    let mut eps = EPS_KINKED;
    loop {
        let (up, down) = (f(eps)?, f(-eps)?);
        let (fwd, bwd) = ((up - center) / eps, (center - down) / eps);
        let scale = fwd.abs().max(bwd.abs()).max(REL_FLOOR);
        if (fwd - bwd).abs() <= KINK_DISAGREEMENT * scale || eps < EPS_KINKED / 5.0 {
            return Ok((up - down) / (2.0 * eps));
        }
        eps /= 10.0;
    }
}

/// The function under test.
#[derive(Clone, Debug)]
pub enum Probe {
    Conv2d(ConvSpec),
    GlobalAvgPool,
    Upsample(usize),
    Resize(usize, usize),
    Relu,
    Sigmoid,
    Softplus,
    Add,
    Mul,
    Concat,
    ChannelScale,
    BatchNorm(BnAffine<f64>),
    MaxPool { kernel: usize, stride: usize },
    LogL1 { truth: Tensor<f64>, mask: Vec<bool> },
    Stem(Stem),
    Bottleneck(Bottleneck),
    Crb(Crb),
    Afb(Afb),
    Network(Box<Network>),
}

impl Probe {
    pub fn forward<B: Backend<f64>>(&self, b: &mut B, store: &ParamStore<f64>, x: &[B::Value]) -> Result<B::Value> {
        match self {
            Probe::Conv2d(spec) => b.conv2d(&x[0], &x[1], &x[2], spec),
            Probe::GlobalAvgPool => b.global_avg_pool(&x[0]),
            Probe::Upsample(f) => b.upsample_bilinear(&x[0], *f),
            Probe::Resize(h, w) => b.resize_bilinear(&x[0], *h, *w),
            Probe::Relu => b.relu(&x[0]),
            Probe::Sigmoid => b.sigmoid(&x[0]),
            Probe::Softplus => b.softplus(&x[0]),
            Probe::Add => b.add(&x[0], &x[1]),
            Probe::Mul => b.mul(&x[0], &x[1]),
            Probe::Concat => b.concat_channels(&x[0], &x[1]),
            Probe::ChannelScale => b.channel_scale(&x[0], &x[1]),
            Probe::BatchNorm(bn) => b.batchnorm_frozen(&x[0], bn),
            Probe::MaxPool { kernel, stride } => b.max_pool2d(&x[0], *kernel, *stride),
            Probe::LogL1 { truth, mask } => b.log_l1_loss(&x[0], truth, mask),
            Probe::Stem(s) => s.forward(b, store, &x[0]),
            Probe::Bottleneck(u) => u.forward(b, store, &x[0]),
            Probe::Crb(c) => c.forward(b, store, &x[0]),
            Probe::Afb(a) => a.forward(b, store, &x[0], &x[1]),
            Probe::Network(n) => n.forward(b, store, &x[0]),
        }
    }

    fn kinked(&self) -> bool {
        matches!(
            self,
            Probe::Relu
                | Probe::MaxPool { .. }
                | Probe::Stem(_)
                | Probe::Bottleneck(_)
                | Probe::Crb(_)
                | Probe::Afb(_)
                | Probe::Network(_)
        )
    }
}

/// One randomized instance: probe, inputs, and parameters.
#[derive(Clone, Debug)]
pub struct Instance {
    pub probe: Probe,
    pub inputs: Vec<Tensor<f64>>,
    pub store: ParamStore<f64>,
}

/// Worst error found in one instance.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceResult {
    pub max_rel_err: f64,
    pub coords: usize,
    /// Tensor and flat index of the worst coordinate.
    pub worst: String,
}

fn reduce<B: Backend<f64>>(b: &mut B, y: &B::Value, proj: &Tensor<f64>) -> Result<B::Value> {
    let r = b.constant(proj.clone());
    let s = b.mul(y, &r)?;
    b.sum(&s)
}

fn eval_eager(inst: &Instance, inputs: &[Tensor<f64>], store: &ParamStore<f64>, proj: &Tensor<f64>) -> Result<f64> {
    let mut b = Eager::new();
    let xs: Vec<_> = inputs.iter().map(|t| b.constant(t.clone())).collect();
    let y = inst.probe.forward(&mut b, store, &xs)?;
    let l = reduce(&mut b, &y, proj)?;
    l.item()
}

/// Compares analytic and numeric gradients on up to `coords` coordinates per tensor.
pub fn check_instance(inst: &Instance, coords: usize, rng: &mut impl Rng) -> Result<InstanceResult> {
    let mut g = Graph::new();
    let leaves: Vec<_> = inst.inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let y = inst.probe.forward(&mut g, &inst.store, &leaves)?;
    let proj = Tensor::normal(g.value(&y).dims(), 1.0, rng);
    let loss = reduce(&mut g, &y, &proj)?;
    let grads = g.backward(loss)?;

    let kinked = inst.probe.kinked();
    let mut result = InstanceResult {
        max_rel_err: 0.0,
        coords: 0,
        worst: String::new(),
    };
    let mut record = |label: &str, i: usize, analytic: f64, numeric: f64| {
        let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        result.coords += 1;
        if err > result.max_rel_err || result.worst.is_empty() {
            result.max_rel_err = err;
            result.worst = format!("{label}[{i}] analytic={analytic:e} numeric={numeric:e}");
        }
    };

    for (k, leaf) in leaves.iter().enumerate() {
        let analytic = grads
            .of(*leaf)
            .ok_or_else(|| Error::Usage(format!("input {k} received no gradient")))?;
        let n = inst.inputs[k].len();
        for i in sample(rng, n, coords.min(n)) {
            let mut inputs = inst.inputs.clone();
            let base = inputs[k].data()[i];
            let numeric = difference(kinked, |h| {
                inputs[k].data_mut()[i] = base + h;
                eval_eager(inst, &inputs, &inst.store, &proj)
            })?;
            record(&format!("input{k}"), i, analytic.data()[i], numeric);
        }
    }

    let names: Vec<String> = inst.store.trainable_names().map(str::to_string).collect();
    for name in names {
        let analytic = grads
            .named(&name)
            .ok_or_else(|| Error::Usage(format!("parameter {name} received no gradient")))?;
        let n = analytic.len();
        let mut store = inst.store.clone();
        for i in sample(rng, n, coords.min(n)) {
            let base = store.tensor(&name)?.data()[i];
            let numeric = difference(kinked, |h| {
                store.tensor_mut(&name)?.data_mut()[i] = base + h;
                eval_eager(inst, &inst.inputs, &store, &proj)
            })?;
            store.tensor_mut(&name)?.data_mut()[i] = base;
            record(&name, i, analytic.data()[i], numeric);
        }
    }
    Ok(result)
}

/// Aggregated result for one probe family.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckRow {
    pub name: String,
    pub instances: usize,
    pub coords: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

impl GradCheckRow {
    pub fn passed(&self) -> bool {
        self.instances > 0 && self.max_rel_err < REL_TOL
    }
}

impl fmt::Display for GradCheckRow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<18} {:>3} instances {:>6} coords  max_rel_err={:.3e}  {}",
            self.name,
            self.instances,
            self.coords,
            self.max_rel_err,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SuiteOptions {
    pub seed: u64,
    pub instances: usize,
    /// Coordinates sampled per input or parameter tensor.
    pub coords: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        Self {
            seed: 0,
            instances: 5,
            coords: 12,
        }
    }
}

/// Randomizes biases and batch-norm statistics so every path of a block is exercised.
fn perturb_store(store: &mut ParamStore<f64>, rng: &mut ChaCha8Rng) {
    for (name, p) in store.iter_mut() {
        let n = p.tensor.dims().to_vec();
        let fresh = |lo: f64, hi: f64, rng: &mut ChaCha8Rng| Tensor::uniform(n.clone(), lo, hi, rng);
        if name.ends_with(".bias") {
            p.tensor = fresh(-0.1, 0.1, rng);
        } else if name.ends_with(".gamma") || name.ends_with(".var") {
            p.tensor = fresh(0.5, 1.5, rng);
        } else if name.ends_with(".beta") || name.ends_with(".mean") {
            p.tensor = fresh(-0.1, 0.1, rng);
        }
    }
}

/// The reduced network configuration used by the whole-network row.
pub fn tiny_network_config() -> NetworkConfig {
    NetworkConfig {
        preset: Preset::Toy,
        stem_channels: 4,
        stage_channels: [8, 12, 16, 20],
        stage_block_counts: [1, 1, 1, 1],
        dilation_rates: DILATION_RATES,
        reduced_channels: 8,
        attention_ratio: 4,
    }
}

fn block_instance(
    probe: Probe,
    inputs: Vec<Tensor<f64>>,
    register: impl FnOnce(&mut ParamStore<f64>, &mut Initializer) -> Result<()>,
    rng: &mut ChaCha8Rng,
) -> Result<Instance> {
    let mut store = ParamStore::new();
    register(&mut store, &mut Initializer::new(rng.random()))?;
    perturb_store(&mut store, rng);
    Ok(Instance { probe, inputs, store })
}

/// Builds instance `i` of the family `name`.
pub fn make_instance(name: &str, i: usize, rng: &mut ChaCha8Rng) -> Result<Instance> {
    let r = DILATION_RATES[i % 4];
    let u = |dims: &[usize], rng: &mut ChaCha8Rng| Tensor::<f64>::uniform(dims.to_vec(), -1.0, 1.0, rng);
    let plain = |probe, inputs| Instance {
        probe,
        inputs,
        store: ParamStore::new(),
    };
    Ok(match name {
        "conv2d" => {
            let (cin, cout) = (rng.random_range(1..4), rng.random_range(1..4));
            let k = [1, 3, 3, 2, 5][i % 5];
            let mut spec = ConvSpec::new(cout, cin, k).with_dilation(r).with_stride(1 + i % 2);
            if i % 3 == 2 {
                spec = spec.with_padding(Padding::Valid).with_dilation(1);
            }
            let (h, w) = (rng.random_range(5..9), rng.random_range(5..9));
            plain(
                Probe::Conv2d(spec),
                vec![u(&[2, cin, h, w], rng), u(&spec.weight_dims(), rng), u(&[cout], rng)],
            )
        }
        "global_avg_pool" => plain(Probe::GlobalAvgPool, vec![u(&[2, 3, 1 + i, 4], rng)]),
        "bilinear_upsample" => {
            if i.is_multiple_of(2) {
                plain(Probe::Upsample(1 + i % 3), vec![u(&[1, 2, 3 + i, 4], rng)])
            } else {
                plain(Probe::Resize(3 + 2 * i, 5), vec![u(&[2, 2, 4, 7], rng)])
            }
        }
        "relu" => plain(Probe::Relu, vec![u(&[2, 3, 4, 4], rng)]),
        "sigmoid" => plain(Probe::Sigmoid, vec![u(&[2, 3, 4, 4], rng).map(|v| v * 4.0)]),
        "softplus" => plain(Probe::Softplus, vec![u(&[2, 3, 4, 4], rng).map(|v| v * 4.0)]),
        "add" => plain(Probe::Add, vec![u(&[2, 3, 4, 5], rng), u(&[2, 3, 4, 5], rng)]),
        "mul" => plain(Probe::Mul, vec![u(&[2, 3, 4, 5], rng), u(&[2, 3, 4, 5], rng)]),
        "concat_channels" => {
            let (a, b) = (1 + i % 3, 2 + i % 2);
            plain(Probe::Concat, vec![u(&[2, a, 3, 4], rng), u(&[2, b, 3, 4], rng)])
        }
        "channel_scale" => plain(Probe::ChannelScale, vec![u(&[2, 3, 4, 5], rng), u(&[2, 3, 1, 1], rng)]),
        "batchnorm_frozen" => {
            let c = 2 + i % 3;
            let pos = |rng: &mut ChaCha8Rng| Tensor::<f64>::uniform([c], 0.5, 1.5, rng);
            let (gamma, var) = (pos(rng), pos(rng));
            let bn = BnAffine::from_stats(&gamma, &u(&[c], rng), &u(&[c], rng), &var, BN_EPS)?;
            plain(Probe::BatchNorm(bn), vec![u(&[2, c, 3, 4], rng)])
        }
        "max_pool2d" => plain(Probe::MaxPool { kernel: 3, stride: 2 }, vec![u(&[2, 2, 4 + i, 6], rng)]),
        "log_l1_loss" => {
            let dims = [2, 1, 3, 4];
            let truth = Tensor::uniform(dims, 0.5, 4.0, rng);
            let mask: Vec<bool> = (0..24).map(|k| k % 5 != i % 5).collect();
            plain(Probe::LogL1 { truth, mask }, vec![Tensor::uniform(dims, 0.2, 5.0, rng)])
        }
        "stem" => {
            let stem = Stem::new("stem", 3, 4);
            let x = u(&[1, 3, 8 + 4 * (i % 2), 8], rng);
            block_instance(
                Probe::Stem(stem.clone()),
                vec![x],
                |s, init| stem.register(s, init),
                rng,
            )?
        }
        "bottleneck" => {
            let (cin, cout) = if i.is_multiple_of(2) { (8, 8) } else { (4, 8) };
            let unit = Bottleneck::new("unit", cin, cout, r)?;
            let x = u(&[1, cin, 6, 6], rng);
            block_instance(
                Probe::Bottleneck(unit.clone()),
                vec![x],
                |s, init| unit.register(s, init),
                rng,
            )?
        }
        "crb" => {
            let crb = Crb::new("crb", 6, 4, r)?;
            let x = u(&[1, 6, 6, 5], rng);
            block_instance(Probe::Crb(crb.clone()), vec![x], |s, init| crb.register(s, init), rng)?
        }
        "afb" => {
            let afb = Afb::new("afb", 8, 4)?;
            let (d, s) = (u(&[2, 8, 4, 4], rng), u(&[2, 8, 4, 4], rng));
            block_instance(
                Probe::Afb(afb.clone()),
                vec![d, s],
                |st, init| afb.register(st, init),
                rng,
            )?
        }
        "network" => {
            let net = Network::new(tiny_network_config())?;
            let mut store = net.init_params::<f64>(rng.random(), false)?;
            perturb_store(&mut store, rng);
            Instance {
                probe: Probe::Network(Box::new(net)),
                inputs: vec![u(&[1, 3, 16, 16], rng)],
                store,
            }
        }
        _ => return Err(Error::Usage(format!("unknown gradient check {name:?}"))),
    })
}

/// Primitive and block families, in report order.
pub const FAMILIES: [&str; 18] = [
    "conv2d",
    "global_avg_pool",
    "bilinear_upsample",
    "relu",
    "sigmoid",
    "softplus",
    "add",
    "mul",
    "concat_channels",
    "channel_scale",
    "batchnorm_frozen",
    "max_pool2d",
    "log_l1_loss",
    "stem",
    "bottleneck",
    "crb",
    "afb",
    "network",
];

pub fn check_family(name: &str, opts: &SuiteOptions) -> Result<GradCheckRow> {
    // One stream per family, so rows do not depend on each other.
    let stream = FAMILIES.iter().position(|f| *f == name).unwrap_or(FAMILIES.len()) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(stream);
    let mut row = GradCheckRow {
        name: name.to_string(),
        instances: 0,
        coords: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    for i in 0..opts.instances {
        let inst = make_instance(name, i, &mut rng)?;
        let res = check_instance(&inst, opts.coords, &mut rng)?;
        row.instances += 1;
        row.coords += res.coords;
        if res.max_rel_err >= row.max_rel_err {
            row.max_rel_err = res.max_rel_err;
            row.worst = format!("instance {i}: {}", res.worst);
        }
    }
    Ok(row)
}

pub fn run_suite(opts: &SuiteOptions) -> Result<Vec<GradCheckRow>> {
    FAMILIES.iter().map(|f| check_family(f, opts)).collect()
}
