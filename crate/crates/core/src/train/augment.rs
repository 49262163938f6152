//! Photometric and flip augmentation. Each sample consumes exactly three
//! uniform draws, in order: brightness, contrast, flip.

use rand::Rng;

use crate::error::{Error, Result};
use crate::io::RgbdSample;

/// Point the contrast factor scales about.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ContrastPivot {
    /// Mean over all channels of the (brightness-shifted) image.
    ImageMean,
    Fixed(f32),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub brightness_delta_range: [f32; 2],
    pub contrast_factor_range: [f32; 2],
    pub flip_probability: f64,
    pub contrast_pivot: ContrastPivot,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            brightness_delta_range: [-0.2, 0.2],
            contrast_factor_range: [0.8, 1.2],
            flip_probability: 0.5,
            contrast_pivot: ContrastPivot::ImageMean,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [b0, b1] = self.brightness_delta_range;
        let [c0, c1] = self.contrast_factor_range;
        if !(b0 <= b1 && b0.is_finite() && b1.is_finite()) {
            return Err(Error::config(format!("bad brightness range [{b0}, {b1}]")));
        }
        if !(0.0 <= c0 && c0 <= c1 && c1.is_finite()) {
            return Err(Error::config(format!("bad contrast range [{c0}, {c1}]")));
        }
        if !(0.0..=1.0).contains(&self.flip_probability) {
            return Err(Error::config(format!(
                "flip probability {} outside [0, 1]",
                self.flip_probability
            )));
        }
        Ok(())
    }
}

/// The concrete transform applied to one sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub brightness: f32,
    pub contrast: f32,
    pub flip: bool,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self {
        brightness: 0.0,
        contrast: 1.0,
        flip: false,
    };

    pub fn draw<R: Rng + ?Sized>(cfg: &AugmentConfig, rng: &mut R) -> Self {
        let lerp = |[lo, hi]: [f32; 2], u: f64| lo + (hi - lo) * u as f32;
        let brightness = lerp(cfg.brightness_delta_range, rng.random());
        let contrast = lerp(cfg.contrast_factor_range, rng.random());
        let flip = rng.random::<f64>() < cfg.flip_probability;
        Self {
            brightness,
            contrast,
            flip,
        }
    }

    /// Brightness shift, contrast about the pivot, clamp to [0, 1], then the
    /// optional flip of colour, depth, mask, and principal point together.
    pub fn apply(&self, sample: &RgbdSample, pivot: ContrastPivot) -> RgbdSample {
        let mut out = sample.clone();
        if self.brightness != 0.0 || self.contrast != 1.0 {
            let shifted: Vec<f32> = sample.rgb.data.iter().map(|v| v + self.brightness).collect();
            let p = match pivot {
                ContrastPivot::ImageMean => {
                    (shifted.iter().map(|&v| v as f64).sum::<f64>() / shifted.len() as f64) as f32
                }
                ContrastPivot::Fixed(p) => p,
            };
            for (o, v) in out.rgb.data.iter_mut().zip(shifted) {
                *o = ((v - p) * self.contrast + p).clamp(0.0, 1.0);
            }
        }
        if self.flip {
            out = out.flip_horizontal();
        }
        out
    }
}

/// Draws parameters from `rng` and applies them. Disabled configs return the
/// sample unchanged without consuming randomness.
pub fn augment_sample<R: Rng + ?Sized>(sample: &RgbdSample, cfg: &AugmentConfig, rng: &mut R) -> RgbdSample {
    if !cfg.enabled {
        return sample.clone();
    }
    AugmentParams::draw(cfg, rng).apply(sample, cfg.contrast_pivot)
}
