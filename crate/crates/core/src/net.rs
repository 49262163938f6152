//! The full depth network: a dilated residual feature extractor producing
//! four quarter-resolution side outputs, and a decoder that fuses them
//! deep-to-shallow with attention before a single 2× bilinear upsample.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{Afb, ConvLayer, Crb, Initializer, ParamGroup, ParamStore, ResStage, Stem, WeightInit};
use crate::tensor::{Backend, ConvSpec, Eager, Real, Tensor};

/// The fixed dilation rate of each residual stage.
pub const DILATION_RATES: [usize; 4] = [1, 2, 4, 8];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Narrow, shallow network for desk-scale training and tests.
    Toy,
    /// 101-layer-style widths and depths.
    Full,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "toy" => Ok(Preset::Toy),
            "full" => Ok(Preset::Full),
            other => Err(Error::config(format!(
                "unknown preset {other:?} (expected toy or full)"
            ))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Toy => "toy",
            Preset::Full => "full",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkConfig {
    pub preset: Preset,
    pub stem_channels: usize,
    pub stage_channels: [usize; 4],
    pub stage_block_counts: [usize; 4],
    pub dilation_rates: [usize; 4],
    /// Channel count every side output is reduced to before fusion.
    pub reduced_channels: usize,
    /// Bottleneck ratio inside each attention block.
    pub attention_ratio: usize,
}

impl NetworkConfig {
    pub fn toy() -> Self {
        Self {
            preset: Preset::Toy,
            stem_channels: 32,
            stage_channels: [64, 96, 128, 192],
            stage_block_counts: [2, 2, 2, 2],
            dilation_rates: DILATION_RATES,
            reduced_channels: 64,
            attention_ratio: 4,
        }
    }

    pub fn full() -> Self {
        Self {
            preset: Preset::Full,
            stem_channels: 64,
            stage_channels: [256, 512, 1024, 2048],
            stage_block_counts: [3, 4, 23, 3],
            dilation_rates: DILATION_RATES,
            reduced_channels: 256,
            attention_ratio: 4,
        }
    }

    pub fn preset(preset: Preset) -> Self {
        match preset {
            Preset::Toy => Self::toy(),
            Preset::Full => Self::full(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dilation_rates != DILATION_RATES {
            return Err(Error::config(format!(
                "dilation rates must be {DILATION_RATES:?}, got {:?}",
                self.dilation_rates
            )));
        }
        if self.stem_channels == 0 || self.stage_block_counts.contains(&0) {
            return Err(Error::config("stem channels and block counts must be positive"));
        }
        if self.stage_channels[0] == 0 || self.stage_channels.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(format!(
                "stage channels must be positive and strictly increasing, got {:?}",
                self.stage_channels
            )));
        }
        if self.reduced_channels == 0 || self.reduced_channels > self.stage_channels[0] {
            return Err(Error::config(format!(
                "reduced channels {} must be in 1..={}",
                self.reduced_channels, self.stage_channels[0]
            )));
        }
        if self.attention_ratio == 0 || self.attention_ratio > self.reduced_channels {
            return Err(Error::config(format!(
                "attention ratio {} invalid for {} channels",
                self.attention_ratio, self.reduced_channels
            )));
        }
        Ok(())
    }
}

/// Feature maps captured after each residual stage, shallow to deep.
#[derive(Clone, Debug)]
pub struct SideOutputs<V> {
    pub stages: [V; 4],
}

/// Value forced onto every attention vector through the excite bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ForcedAttention {
    Zero,
    One,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    stem: Stem,
    stages: Vec<ResStage>,
    /// Reduce block applied to each side output (index = stage − 1).
    side_crbs: Vec<Crb>,
    /// Attention fusion for stages 1..=3 (index = stage − 1).
    afbs: Vec<Afb>,
    /// Reduce block after each fusion, stages 1..=3.
    refine_crbs: Vec<Crb>,
    head: ConvLayer,
}

/// Prefixes of the parameters frozen by the "first two stages" rule.
pub const FROZEN_PREFIXES: [&str; 2] = ["dfe.stem.", "dfe.stage1."];

impl Network {
    pub fn new(config: NetworkConfig) -> Result<Self> {
        config.validate()?;
        let cr = config.reduced_channels;
        let stem = Stem::new("dfe.stem", 3, config.stem_channels);
        let mut stages = Vec::with_capacity(4);
        let mut in_ch = config.stem_channels;
        for s in 0..4 {
            stages.push(ResStage::new(
                &format!("dfe.stage{}", s + 1),
                in_ch,
                config.stage_channels[s],
                config.stage_block_counts[s],
                config.dilation_rates[s],
            )?);
            in_ch = config.stage_channels[s];
        }
        let side_crbs = (0..4)
            .map(|s| {
                Crb::new(
                    &format!("dmg.crb{}", s + 1),
                    config.stage_channels[s],
                    cr,
                    config.dilation_rates[s],
                )
            })
            .collect::<Result<_>>()?;
        let afbs = (0..3)
            .map(|s| Afb::new(&format!("dmg.afb{}", s + 1), cr, config.attention_ratio))
            .collect::<Result<_>>()?;
        let refine_crbs = (0..3)
            .map(|s| Crb::new(&format!("dmg.refine{}", s + 1), cr, cr, config.dilation_rates[s]))
            .collect::<Result<_>>()?;
        Ok(Self {
            config,
            stem,
            stages,
            side_crbs,
            afbs,
            refine_crbs,
            head: ConvLayer::new("dmg.head", ConvSpec::new(1, cr, 3)),
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn stem(&self) -> &Stem {
        &self.stem
    }

    pub fn stages(&self) -> &[ResStage] {
        &self.stages
    }

    pub fn side_crbs(&self) -> &[Crb] {
        &self.side_crbs
    }

    pub fn afbs(&self) -> &[Afb] {
        &self.afbs
    }

    pub fn refine_crbs(&self) -> &[Crb] {
        &self.refine_crbs
    }

    pub fn head(&self) -> &ConvLayer {
        &self.head
    }

    /// Creates every parameter. The extractor is He-initialized, the decoder
    /// Xavier-initialized, biases start at zero and batch norms at identity.
    /// With `freeze_first_two_stages`, the stem and stage 1 are frozen.
    pub fn init_params<T: Real>(&self, seed: u64, freeze_first_two_stages: bool) -> Result<ParamStore<T>> {
        let mut store = ParamStore::new();
        let mut init = Initializer::new(seed).with(WeightInit::He, ParamGroup::Extractor);
        self.stem.register(&mut store, &mut init)?;
        for stage in &self.stages {
            stage.register(&mut store, &mut init)?;
        }
        init.set(WeightInit::Xavier, ParamGroup::Decoder);
        self.side_crbs[3].register(&mut store, &mut init)?;
        for s in (0..3).rev() {
            self.side_crbs[s].register(&mut store, &mut init)?;
            self.afbs[s].register(&mut store, &mut init)?;
            self.refine_crbs[s].register(&mut store, &mut init)?;
        }
        self.head.register(&mut store, &mut init)?;
        if freeze_first_two_stages {
            for prefix in FROZEN_PREFIXES {
                store.freeze_prefix(prefix);
            }
        }
        Ok(store)
    }

    /// Stem plus the four dilated stages; every side output is at 1/4 of the input.
    pub fn dfe_forward<T: Real, B: Backend<T>>(
        &self,
        b: &mut B,
        store: &ParamStore<T>,
        image: &B::Value,
    ) -> Result<SideOutputs<B::Value>> {
        let c = b.value(image).nchw()?.1;
        if c != 3 {
            return Err(Error::shape(format!("expected a 3-channel image, got {c} channels")));
        }
        let mut x = self.stem.forward(b, store, image)?;
        let mut sides = Vec::with_capacity(4);
        for stage in &self.stages {
            x = stage.forward(b, store, &x)?;
            sides.push(x.clone());
        }
        let stages: [B::Value; 4] = sides.try_into().ok().expect("four stages");
        Ok(SideOutputs { stages })
    }

    /// Deep-to-shallow fusion: stage 4 seeds the stream, then each shallower
    /// stage is reduced, attention-fused into the stream, and refined. The head
    /// maps to one softplus channel, upsampled 2×: half the input resolution.
    pub fn dmg_forward<T: Real, B: Backend<T>>(
        &self,
        b: &mut B,
        store: &ParamStore<T>,
        sides: &SideOutputs<B::Value>,
    ) -> Result<B::Value> {
        let dims = b.value(&sides.stages[0]).nchw()?;
        for (s, side) in sides.stages.iter().enumerate() {
            let d = b.value(side).nchw()?;
            if (d.0, d.2, d.3) != (dims.0, dims.2, dims.3) {
                return Err(Error::shape(format!(
                    "side output {} is {:?}, side output 1 is {:?}",
                    s + 1,
                    b.value(side).dims(),
                    b.value(&sides.stages[0]).dims()
                )));
            }
        }
        let mut solid = self.side_crbs[3].forward(b, store, &sides.stages[3])?;
        for s in (0..3).rev() {
            let dotted = self.side_crbs[s].forward(b, store, &sides.stages[s])?;
            let fused = self.afbs[s].forward(b, store, &dotted, &solid)?;
            solid = self.refine_crbs[s].forward(b, store, &fused)?;
        }
        let depth = self.head.forward(b, store, &solid)?;
        let depth = b.softplus(&depth)?;
        b.upsample_bilinear(&depth, 2)
    }

    pub fn forward<T: Real, B: Backend<T>>(
        &self,
        b: &mut B,
        store: &ParamStore<T>,
        image: &B::Value,
    ) -> Result<B::Value> {
        let sides = self.dfe_forward(b, store, image)?;
        self.dmg_forward(b, store, &sides)
    }

    /// Inference on `[N, 3, H, W]`; returns `[N, 1, H/2, W/2]`, or `[N, 1, H, W]`
    /// when `resize_to_input` is set.
    pub fn predict<T: Real>(
        &self,
        store: &ParamStore<T>,
        image: &Tensor<T>,
        resize_to_input: bool,
    ) -> Result<Tensor<T>> {
        let mut b = Eager::new();
        let x = b.constant(image.clone());
        let mut depth = self.forward(&mut b, store, &x)?;
        if resize_to_input {
            let (_, _, h, w) = image.nchw()?;
            depth = b.resize_bilinear(&depth, h, w)?;
        }
        Ok(std::sync::Arc::unwrap_or_clone(depth))
    }

    /// Pins every attention vector to exactly 0 or 1 by overriding the excite biases.
    pub fn force_attention<T: Real>(&self, store: &mut ParamStore<T>, value: ForcedAttention) -> Result<()> {
        let bias = match value {
            ForcedAttention::Zero => T::neg_infinity(),
            ForcedAttention::One => T::infinity(),
        };
        for afb in &self.afbs {
            store.tensor_mut(&afb.excite().bias_name())?.fill(bias);
        }
        Ok(())
    }

    /// Learning-rate group of a parameter name.
    pub fn group_of(name: &str) -> ParamGroup {
        if name.starts_with("dfe.") {
            ParamGroup::Extractor
        } else {
            ParamGroup::Decoder
        }
    }
}
