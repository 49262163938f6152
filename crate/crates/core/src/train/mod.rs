//! Loss, schedules, optimizer, augmentation, the training loop, and checkpoints.

mod adam;
mod augment;
mod checkpoint;
mod schedule;

use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::io::RgbdSample;
use crate::net::Network;
use crate::nn::{ParamGroup, ParamStore};
use crate::tensor::{Backend, Graph, Tensor};

pub use crate::tensor::ops::{log_l1_loss, LogL1};
pub use adam::{adam_step, adam_update, AdamConfig, AdamState};
pub use augment::{augment_sample, AugmentConfig, AugmentParams, ContrastPivot};
pub use checkpoint::{params_checkpoint, Checkpoint, RngState, MAGIC, VERSION};
pub use schedule::{poly_lr, LrSchedule};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: u64,
    /// Total step budget; defaults to `epochs` passes over the dataset.
    pub max_steps: Option<u64>,
    /// Extractor learning rate, `[l_init, l_end]`.
    pub dfe_lr: [f64; 2],
    /// Decoder learning rate, `[l_init, l_end]`.
    pub dmg_lr: [f64; 2],
    pub power: f64,
    pub decay_epochs: u64,
    /// Overrides `decay_epochs` when set.
    pub decay_steps: Option<u64>,
    pub freeze_first_two_stages: bool,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Save a checkpoint every this many steps (0 = never).
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 3,
            epochs: 20,
            max_steps: None,
            dfe_lr: [1e-5, 1e-7],
            dmg_lr: [1e-4, 1e-6],
            power: 1.0,
            decay_epochs: 16,
            decay_steps: None,
            freeze_first_two_stages: true,
            adam: AdamConfig::default(),
            seed: 0,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.dfe_lr[0] > self.dmg_lr[0] {
            return Err(Error::config(format!(
                "extractor rate {} exceeds decoder rate {}",
                self.dfe_lr[0], self.dmg_lr[0]
            )));
        }
        if self.decay_steps == Some(0) || (self.decay_steps.is_none() && self.decay_epochs == 0) {
            return Err(Error::config("decay length must be positive"));
        }
        self.adam.validate()?;
        self.schedules(1)?;
        Ok(())
    }

    pub fn steps_per_epoch(&self, dataset_len: usize) -> u64 {
        dataset_len.div_ceil(self.batch_size) as u64
    }

    pub fn decay_steps_for(&self, dataset_len: usize) -> u64 {
        self.decay_steps
            .unwrap_or(self.decay_epochs * self.steps_per_epoch(dataset_len))
            .max(1)
    }

    pub fn total_steps_for(&self, dataset_len: usize) -> u64 {
        self.max_steps
            .unwrap_or(self.epochs * self.steps_per_epoch(dataset_len))
    }

    /// Extractor and decoder schedules for a given decay length.
    pub fn schedules(&self, decay_steps: u64) -> Result<[LrSchedule; 2]> {
        Ok([
            LrSchedule::new(self.dfe_lr[0], self.dfe_lr[1], decay_steps, self.power)?,
            LrSchedule::new(self.dmg_lr[0], self.dmg_lr[1], decay_steps, self.power)?,
        ])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    /// Number of completed steps, counting this one.
    pub step: u64,
    pub loss: f64,
    pub lr_dfe: f64,
    pub lr_dmg: f64,
    pub batch: Vec<String>,
}

/// Shuffled epoch order drawn from the training generator.
#[derive(Clone, Debug)]
struct Sampler {
    perm: Vec<u64>,
    cursor: usize,
}

impl Sampler {
    /// Next batch; reshuffles at the start of each epoch and keeps a short
    /// final batch.
    fn next_batch(&mut self, rng: &mut ChaCha8Rng, len: usize, batch: usize) -> Vec<usize> {
        if self.cursor == 0 || self.perm.len() != len {
            self.perm = (0..len as u64).collect();
            self.perm.shuffle(rng);
            self.cursor = 0;
        }
        let end = (self.cursor + batch).min(len);
        let out = self.perm[self.cursor..end].iter().map(|&i| i as usize).collect();
        self.cursor = if end == len { 0 } else { end };
        out
    }
}

/// Stacks samples into `[B, 3, H, W]` images, `[B, 1, H, W]` depth and a mask.
pub fn collate(samples: &[RgbdSample]) -> Result<(Tensor<f32>, Tensor<f32>, Vec<bool>)> {
    let first = samples.first().ok_or_else(|| Error::data("empty batch"))?;
    let (h, w) = (first.height(), first.width());
    let mut images = Vec::with_capacity(samples.len() * 3 * h * w);
    let mut depth = Vec::with_capacity(samples.len() * h * w);
    let mut mask = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        s.validate()?;
        if (s.height(), s.width()) != (h, w) {
            return Err(Error::shape(format!(
                "sample {} is {}x{}, batch is {w}x{h}",
                s.id,
                s.width(),
                s.height()
            )));
        }
        images.extend_from_slice(s.rgb.to_tensor::<f32>().data());
        depth.extend_from_slice(s.depth.data());
        mask.extend_from_slice(&s.mask);
    }
    let n = samples.len();
    Ok((
        Tensor::new([n, 3, h, w], images)?,
        Tensor::new([n, 1, h, w], depth)?,
        mask,
    ))
}

/// Training state: parameters, optimizer moments, generator, and step count.
#[derive(Debug)]
pub struct Trainer<'n> {
    net: &'n Network,
    store: ParamStore<f32>,
    adam: AdamState<f32>,
    cfg: TrainConfig,
    augment: AugmentConfig,
    rng: ChaCha8Rng,
    sampler: Sampler,
    step: u64,
    dataset_len: usize,
    schedules: [LrSchedule; 2],
    checkpoint_path: Option<PathBuf>,
}

impl<'n> Trainer<'n> {
    pub fn new(
        net: &'n Network,
        store: ParamStore<f32>,
        cfg: TrainConfig,
        augment: AugmentConfig,
        dataset_len: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        augment.validate()?;
        if dataset_len == 0 {
            return Err(Error::data("training set is empty"));
        }
        let schedules = cfg.schedules(cfg.decay_steps_for(dataset_len))?;
        Ok(Self {
            net,
            adam: AdamState::for_params(&store),
            store,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            sampler: Sampler {
                perm: Vec::new(),
                cursor: 0,
            },
            step: 0,
            dataset_len,
            schedules,
            checkpoint_path: None,
            cfg,
            augment,
        })
    }

    /// Continues from a checkpoint written by [`checkpoint`](Self::checkpoint).
    pub fn resume(
        net: &'n Network,
        mut store: ParamStore<f32>,
        cfg: TrainConfig,
        augment: AugmentConfig,
        dataset_len: usize,
        ckpt: &Checkpoint<f32>,
    ) -> Result<Self> {
        ckpt.restore_params(&mut store)?;
        let mut t = Self::new(net, store, cfg, augment, dataset_len)?;
        for (name, m) in t.adam.m.iter_mut() {
            *m = moment(ckpt, "m", name, m.dims())?;
        }
        for (name, v) in t.adam.v.iter_mut() {
            *v = moment(ckpt, "v", name, v.dims())?;
        }
        t.step = ckpt.step;
        t.rng = ChaCha8Rng::from_seed(ckpt.rng.seed);
        t.rng.set_stream(ckpt.rng.stream);
        t.rng.set_word_pos(ckpt.rng.word_pos);
        t.sampler = Sampler {
            perm: ckpt.rng.perm.clone(),
            cursor: ckpt.rng.cursor as usize,
        };
        Ok(t)
    }

    /// Writes a checkpoint to `path` every `cfg.checkpoint_every` steps and at the end of [`run`](Self::run).
    pub fn with_checkpoint_path(mut self, path: impl Into<PathBuf>) -> Self {
        self.checkpoint_path = Some(path.into());
        self
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn store(&self) -> &ParamStore<f32> {
        &self.store
    }

    pub fn into_store(self) -> ParamStore<f32> {
        self.store
    }

    pub fn schedules(&self) -> &[LrSchedule; 2] {
        &self.schedules
    }

    pub fn lr(&self, group: ParamGroup, step: u64) -> f64 {
        match group {
            ParamGroup::Extractor => self.schedules[0].at(step),
            ParamGroup::Decoder => self.schedules[1].at(step),
        }
    }

    pub fn checkpoint(&self) -> Checkpoint<f32> {
        let mut ckpt = params_checkpoint(&self.store);
        ckpt.step = self.step;
        ckpt.rng = RngState {
            seed: self.rng.get_seed(),
            stream: self.rng.get_stream(),
            word_pos: self.rng.get_word_pos(),
            cursor: self.sampler.cursor as u64,
            perm: self.sampler.perm.clone(),
        };
        for (name, m) in &self.adam.m {
            ckpt.moments.insert(format!("m.{name}"), m.clone());
        }
        for (name, v) in &self.adam.v {
            ckpt.moments.insert(format!("v.{name}"), v.clone());
        }
        ckpt
    }

    /// One optimization step: sample, augment, forward, loss at ground-truth
    /// resolution, backward, then Adam with each group's scheduled rate.
    pub fn train_step(&mut self, dataset: &[RgbdSample]) -> Result<StepReport> {
        if dataset.len() != self.dataset_len {
            return Err(Error::Usage(format!(
                "trainer was built for {} samples, got {}",
                self.dataset_len,
                dataset.len()
            )));
        }
        let idx = self
            .sampler
            .next_batch(&mut self.rng, dataset.len(), self.cfg.batch_size);
        let batch: Vec<RgbdSample> = idx
            .iter()
            .map(|&i| augment_sample(&dataset[i], &self.augment, &mut self.rng))
            .collect();
        let ids: Vec<String> = batch.iter().map(|s| s.id.clone()).collect();
        let (images, truth, mask) = collate(&batch)?;
        let (_, _, h, w) = images.nchw()?;

        let mut g = Graph::new();
        let x = g.constant(images);
        let pred = self.net.forward(&mut g, &self.store, &x)?;
        let pred = g.resize_bilinear(&pred, h, w)?;
        let loss = g.log_l1_loss(&pred, &truth, &mask)?;
        let loss_value = g.value(&loss).item()? as f64;
        let pred_value = g.value(&pred).clone();
        let grads = g.backward(loss)?.into_params();

        let bad: Vec<&str> = grads
            .iter()
            .filter(|(_, t)| !t.is_finite())
            .map(|(n, _)| n.as_str())
            .collect();
        if !loss_value.is_finite() || !bad.is_empty() {
            let (lo, hi) = pred_value
                .data()
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
            return Err(Error::NonFinite {
                step: self.step + 1,
                detail: format!(
                    "loss={loss_value} batch={ids:?} lr_dfe={} lr_dmg={} pred_range=[{lo}, {hi}] non_finite_grads={:?}",
                    self.lr(ParamGroup::Extractor, self.step),
                    self.lr(ParamGroup::Decoder, self.step),
                    &bad[..bad.len().min(8)]
                ),
            });
        }

        let rates = [
            self.lr(ParamGroup::Extractor, self.step),
            self.lr(ParamGroup::Decoder, self.step),
        ];
        let lr = |g: ParamGroup| match g {
            ParamGroup::Extractor => rates[0],
            ParamGroup::Decoder => rates[1],
        };
        adam_step(
            &mut self.store,
            &grads,
            &mut self.adam,
            lr,
            &self.cfg.adam,
            self.step + 1,
        )?;
        self.step += 1;
        Ok(StepReport {
            step: self.step,
            loss: loss_value,
            lr_dfe: rates[0],
            lr_dmg: rates[1],
            batch: ids,
        })
    }

    /// Trains until `until_step` steps have completed, calling `on_step`
    /// after each one. Returns the losses of the steps run by this call.
    pub fn run(
        &mut self,
        dataset: &[RgbdSample],
        until_step: u64,
        mut on_step: impl FnMut(&StepReport) -> Result<()>,
    ) -> Result<Vec<f64>> {
        let mut losses = Vec::new();
        while self.step < until_step {
            let report = self.train_step(dataset)?;
            losses.push(report.loss);
            on_step(&report)?;
            let every = self.cfg.checkpoint_every;
            if let Some(path) = &self.checkpoint_path {
                if every > 0 && self.step.is_multiple_of(every) {
                    self.checkpoint().save(path)?;
                }
            }
        }
        if let Some(path) = &self.checkpoint_path {
            self.checkpoint().save(path)?;
        }
        Ok(losses)
    }
}

fn moment(ckpt: &Checkpoint<f32>, kind: &str, name: &str, dims: &[usize]) -> Result<Tensor<f32>> {
    let key = format!("{kind}.{name}");
    let t = ckpt
        .moments
        .get(&key)
        .ok_or_else(|| Error::shape(format!("checkpoint has no optimizer tensor {key}")))?;
    if t.dims() != dims {
        return Err(Error::shape(format!(
            "tensor {key}: checkpoint has {:?}, network expects {dims:?}",
            t.dims()
        )));
    }
    Ok(t.clone())
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub store: ParamStore<f32>,
    pub losses: Vec<f64>,
}

/// Mean per-sample training loss over `dataset` without augmentation, with the
/// prediction resized to ground-truth resolution as in training.
pub fn dataset_loss(net: &Network, store: &ParamStore<f32>, dataset: &[RgbdSample]) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::data("empty dataset"));
    }
    let mut total = 0.0;
    for s in dataset {
        let pred = net.predict(store, &s.rgb.to_tensor(), true)?;
        let pred = pred.reshape([s.height(), s.width()])?;
        total += log_l1_loss(&pred, &s.depth, &s.mask)?.loss as f64;
    }
    Ok(total / dataset.len() as f64)
}

/// Full training run over `dataset` for the configured step budget.
pub fn train(
    dataset: &[RgbdSample],
    net: &Network,
    store: ParamStore<f32>,
    cfg: &TrainConfig,
    augment: &AugmentConfig,
    on_step: impl FnMut(&StepReport) -> Result<()>,
) -> Result<TrainOutcome> {
    let total = cfg.total_steps_for(dataset.len());
    let mut trainer = Trainer::new(net, store, cfg.clone(), *augment, dataset.len())?;
    let losses = trainer.run(dataset, total, on_step)?;
    Ok(TrainOutcome {
        store: trainer.into_store(),
        losses,
    })
}
