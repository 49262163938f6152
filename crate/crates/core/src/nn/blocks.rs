use super::{ConvLayer, FrozenBn, Initializer, ParamStore};
use crate::error::{Error, Result};
use crate::tensor::{Backend, ConvSpec, Real};

/// Dilation rates the residual stages and their reduce blocks may use.
pub const ALLOWED_DILATIONS: [usize; 4] = [1, 2, 4, 8];

fn check_dilation(dilation: usize) -> Result<()> {
    if ALLOWED_DILATIONS.contains(&dilation) {
        Ok(())
    } else {
        Err(Error::config(format!(
            "dilation {dilation} not in {ALLOWED_DILATIONS:?}"
        )))
    }
}

/// 7×7/2 convolution, frozen BN, relu, then 3×3/2 max pooling: quarter resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct Stem {
    conv: ConvLayer,
    bn: FrozenBn,
}

impl Stem {
    pub fn new(prefix: &str, in_channels: usize, out_channels: usize) -> Self {
        Self {
            conv: ConvLayer::new(
                format!("{prefix}.conv"),
                ConvSpec::new(out_channels, in_channels, 7).with_stride(2),
            ),
            bn: FrozenBn::new(format!("{prefix}.bn"), out_channels),
        }
    }

    pub fn out_channels(&self) -> usize {
        self.conv.spec.out_channels
    }

    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Initializer) -> Result<()> {
        self.conv.register(store, init)?;
        self.bn.register(store, init)
    }

    pub fn forward<T: Real, B: Backend<T>>(
        &self,
        b: &mut B,
        store: &ParamStore<T>,
        image: &B::Value,
    ) -> Result<B::Value> {
        let (_, _, h, w) = b.value(image).nchw()?;
        if h % 4 != 0 || w % 4 != 0 {
            return Err(Error::shape(format!("input {h}x{w} is not divisible by 4")));
        }
        let x = self.conv.forward(b, store, image)?;
        let x = self.bn.forward(b, store, &x)?;
        let x = b.relu(&x)?;
        b.max_pool2d(&x, 3, 2)
    }
}

/// One bottleneck unit: 1×1 reduce, 3×3 dilated, 1×1 expand, each followed
/// by frozen BN; projection skip when the channel count changes.
#[derive(Clone, Debug, PartialEq)]
pub struct Bottleneck {
    reduce: (ConvLayer, FrozenBn),
    conv: (ConvLayer, FrozenBn),
    expand: (ConvLayer, FrozenBn),
    projection: Option<(ConvLayer, FrozenBn)>,
}

impl Bottleneck {
    pub fn new(prefix: &str, in_channels: usize, out_channels: usize, dilation: usize) -> Result<Self> {
        check_dilation(dilation)?;
        let mid = (out_channels / 4).max(1);
        let layer = |name: &str, spec: ConvSpec| {
            (
                ConvLayer::new(format!("{prefix}.{name}"), spec),
                FrozenBn::new(format!("{prefix}.{name}_bn"), spec.out_channels),
            )
        };
        Ok(Self {
            reduce: layer("reduce", ConvSpec::new(mid, in_channels, 1)),
            conv: layer("conv", ConvSpec::new(mid, mid, 3).with_dilation(dilation)),
            expand: layer("expand", ConvSpec::new(out_channels, mid, 1)),
            projection: (in_channels != out_channels)
                .then(|| layer("proj", ConvSpec::new(out_channels, in_channels, 1))),
        })
    }

    fn layers(&self) -> impl Iterator<Item = &(ConvLayer, FrozenBn)> {
        [&self.reduce, &self.conv, &self.expand]
            .into_iter()
            .chain(self.projection.as_ref())
    }

    /// The convolution that ends the residual branch.
    pub fn expand(&self) -> &ConvLayer {
        &self.expand.0
    }

    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Initializer) -> Result<()> {
        for (conv, bn) in self.layers() {
            conv.register(store, init)?;
            bn.register(store, init)?;
        }
        Ok(())
    }

    pub fn forward<T: Real, B: Backend<T>>(&self, b: &mut B, store: &ParamStore<T>, x: &B::Value) -> Result<B::Value> {
        let mut h = x.clone();
        for (i, (conv, bn)) in [&self.reduce, &self.conv, &self.expand].into_iter().enumerate() {
            h = conv.forward(b, store, &h)?;
            h = bn.forward(b, store, &h)?;
            if i < 2 {
                h = b.relu(&h)?;
            }
        }
        let skip = match &self.projection {
            Some((conv, bn)) => {
                let s = conv.forward(b, store, x)?;
                bn.forward(b, store, &s)?
            }
            None => x.clone(),
        };
        let sum = b.add(&h, &skip)?;
        b.relu(&sum)
    }
}

/// A residual stage: a stack of bottleneck units sharing one dilation rate,
/// all at stride 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ResStage {
    pub dilation: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    units: Vec<Bottleneck>,
}

impl ResStage {
    pub fn new(prefix: &str, in_channels: usize, out_channels: usize, units: usize, dilation: usize) -> Result<Self> {
        check_dilation(dilation)?;
        if units == 0 {
            return Err(Error::config(format!("{prefix}: a stage needs at least one unit")));
        }
        let units = (0..units)
            .map(|i| {
                let cin = if i == 0 { in_channels } else { out_channels };
                Bottleneck::new(&format!("{prefix}.unit{i}"), cin, out_channels, dilation)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            dilation,
            in_channels,
            out_channels,
            units,
        })
    }

    pub fn units(&self) -> &[Bottleneck] {
        &self.units
    }

    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Initializer) -> Result<()> {
        self.units.iter().try_for_each(|u| u.register(store, init))
    }

    pub fn forward<T: Real, B: Backend<T>>(&self, b: &mut B, store: &ParamStore<T>, x: &B::Value) -> Result<B::Value> {
        let c = b.value(x).nchw()?.1;
        if c != self.in_channels {
            return Err(Error::shape(format!(
                "stage expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        let mut h = x.clone();
        for unit in &self.units {
            h = unit.forward(b, store, &h)?;
        }
        Ok(h)
    }
}

/// Channel Reduce Block: 1×1 conv to `C_r` channels, then a basic residual
/// block of two dilated 3×3 convs whose skip is the 1×1 output.
#[derive(Clone, Debug, PartialEq)]
pub struct Crb {
    reduce: ConvLayer,
    conv1: (ConvLayer, FrozenBn),
    conv2: (ConvLayer, FrozenBn),
}

impl Crb {
    pub fn new(prefix: &str, in_channels: usize, reduced: usize, dilation: usize) -> Result<Self> {
        check_dilation(dilation)?;
        if in_channels < reduced {
            return Err(Error::config(format!(
                "{prefix}: cannot reduce {in_channels} channels to {reduced}"
            )));
        }
        let conv = |name: &str| {
            (
                ConvLayer::new(
                    format!("{prefix}.{name}"),
                    ConvSpec::new(reduced, reduced, 3).with_dilation(dilation),
                ),
                FrozenBn::new(format!("{prefix}.{name}_bn"), reduced),
            )
        };
        Ok(Self {
            reduce: ConvLayer::new(format!("{prefix}.reduce"), ConvSpec::new(reduced, in_channels, 1)),
            conv1: conv("conv1"),
            conv2: conv("conv2"),
        })
    }

    pub fn reduce(&self) -> &ConvLayer {
        &self.reduce
    }

    /// The two convolutions of the residual branch.
    pub fn branch(&self) -> [&ConvLayer; 2] {
        [&self.conv1.0, &self.conv2.0]
    }

    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Initializer) -> Result<()> {
        self.reduce.register(store, init)?;
        for (conv, bn) in [&self.conv1, &self.conv2] {
            conv.register(store, init)?;
            bn.register(store, init)?;
        }
        Ok(())
    }

    pub fn forward<T: Real, B: Backend<T>>(&self, b: &mut B, store: &ParamStore<T>, x: &B::Value) -> Result<B::Value> {
        let skip = self.reduce.forward(b, store, x)?;
        let h = self.conv1.0.forward(b, store, &skip)?;
        let h = self.conv1.1.forward(b, store, &h)?;
        let h = b.relu(&h)?;
        let h = self.conv2.0.forward(b, store, &h)?;
        let h = self.conv2.1.forward(b, store, &h)?;
        let sum = b.add(&h, &skip)?;
        b.relu(&sum)
    }
}

/// Attention Fuse Block. The current stage's features (`dotted`) are
/// reweighted per channel by a context vector computed from both inputs,
/// then added to the deeper stream (`solid`).
#[derive(Clone, Debug, PartialEq)]
pub struct Afb {
    channels: usize,
    squeeze: ConvLayer,
    excite: ConvLayer,
}

impl Afb {
    pub fn new(prefix: &str, channels: usize, ratio: usize) -> Result<Self> {
        if ratio == 0 || channels < ratio {
            return Err(Error::config(format!(
                "{prefix}: attention ratio {ratio} invalid for {channels} channels"
            )));
        }
        let hidden = channels / ratio;
        Ok(Self {
            channels,
            squeeze: ConvLayer::new(format!("{prefix}.squeeze"), ConvSpec::new(hidden, 2 * channels, 1)),
            excite: ConvLayer::new(format!("{prefix}.excite"), ConvSpec::new(channels, hidden, 1)),
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn squeeze(&self) -> &ConvLayer {
        &self.squeeze
    }

    /// The layer whose bias can pin the attention to 0 (`-inf`) or 1 (`+inf`).
    pub fn excite(&self) -> &ConvLayer {
        &self.excite
    }

    pub fn register<T: Real>(&self, store: &mut ParamStore<T>, init: &mut Initializer) -> Result<()> {
        self.squeeze.register(store, init)?;
        self.excite.register(store, init)
    }

    /// Per-channel weights `[N, C, 1, 1]` in (0, 1).
    pub fn attention<T: Real, B: Backend<T>>(
        &self,
        b: &mut B,
        store: &ParamStore<T>,
        dotted: &B::Value,
        solid: &B::Value,
    ) -> Result<B::Value> {
        let (dd, sd) = (b.value(dotted).dims(), b.value(solid).dims());
        if dd != sd {
            return Err(Error::shape(format!("afb inputs differ: {dd:?} vs {sd:?}")));
        }
        if dd[1] != self.channels {
            return Err(Error::shape(format!(
                "afb expects {} channels, got {}",
                self.channels, dd[1]
            )));
        }
        let cat = b.concat_channels(dotted, solid)?;
        let pooled = b.global_avg_pool(&cat)?;
        let h = self.squeeze.forward(b, store, &pooled)?;
        let h = b.relu(&h)?;
        let h = self.excite.forward(b, store, &h)?;
        b.sigmoid(&h)
    }

    pub fn forward<T: Real, B: Backend<T>>(
        &self,
        b: &mut B,
        store: &ParamStore<T>,
        dotted: &B::Value,
        solid: &B::Value,
    ) -> Result<B::Value> {
        let weights = self.attention(b, store, dotted, solid)?;
        let scaled = b.channel_scale(dotted, &weights)?;
        b.add(solid, &scaled)
    }
}
