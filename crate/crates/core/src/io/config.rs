//! `key=value` run configuration with `#` comments. Omitted keys keep their
//! defaults; `preset` is applied before any other key regardless of position.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::Aggregation;
use crate::net::{NetworkConfig, Preset};
use crate::train::{AugmentConfig, ContrastPivot, TrainConfig};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Paths {
    pub train_dir: Option<PathBuf>,
    pub eval_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub augment: AugmentConfig,
    pub paths: Paths,
    /// Apply the 312×416 resize and 240×320 centre crop when loading.
    pub nyu_preprocess: bool,
    pub aggregation: Aggregation,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            network: NetworkConfig::full(),
            train: TrainConfig::default(),
            augment: AugmentConfig::default(),
            paths: Paths::default(),
            nyu_preprocess: false,
            aggregation: Aggregation::Pixel,
        }
    }
}

pub const KEYS: &[&str] = &[
    "preset",
    "reduced_channels",
    "attention_ratio",
    "batch_size",
    "epochs",
    "steps",
    "decay_epochs",
    "decay_steps",
    "dfe_lr_init",
    "dfe_lr_end",
    "dmg_lr_init",
    "dmg_lr_end",
    "power",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "freeze_first_two_stages",
    "seed",
    "checkpoint_every",
    "augment",
    "brightness_min",
    "brightness_max",
    "contrast_min",
    "contrast_max",
    "flip_probability",
    "contrast_pivot",
    "nyu_preprocess",
    "aggregation",
    "train_dir",
    "eval_dir",
    "checkpoint",
    "out_dir",
];

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse {value:?}"))
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {value:?}")),
    }
}

impl RunConfig {
    fn apply(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        let t = &mut self.train;
        let a = &mut self.augment;
        match key {
            "preset" => self.network = NetworkConfig::preset(parse::<Preset>(key, v)?),
            "reduced_channels" => self.network.reduced_channels = parse(key, v)?,
            "attention_ratio" => self.network.attention_ratio = parse(key, v)?,
            "batch_size" => t.batch_size = parse(key, v)?,
            "epochs" => t.epochs = parse(key, v)?,
            "steps" => t.max_steps = Some(parse(key, v)?),
            "decay_epochs" => t.decay_epochs = parse(key, v)?,
            "decay_steps" => t.decay_steps = Some(parse(key, v)?),
            "dfe_lr_init" => t.dfe_lr[0] = parse(key, v)?,
            "dfe_lr_end" => t.dfe_lr[1] = parse(key, v)?,
            "dmg_lr_init" => t.dmg_lr[0] = parse(key, v)?,
            "dmg_lr_end" => t.dmg_lr[1] = parse(key, v)?,
            "power" => t.power = parse(key, v)?,
            "adam_beta1" => t.adam.beta1 = parse(key, v)?,
            "adam_beta2" => t.adam.beta2 = parse(key, v)?,
            "adam_eps" => t.adam.eps = parse(key, v)?,
            "freeze_first_two_stages" => t.freeze_first_two_stages = parse_bool(key, v)?,
            "seed" => t.seed = parse(key, v)?,
            "checkpoint_every" => t.checkpoint_every = parse(key, v)?,
            "augment" => a.enabled = parse_bool(key, v)?,
            "brightness_min" => a.brightness_delta_range[0] = parse(key, v)?,
            "brightness_max" => a.brightness_delta_range[1] = parse(key, v)?,
            "contrast_min" => a.contrast_factor_range[0] = parse(key, v)?,
            "contrast_max" => a.contrast_factor_range[1] = parse(key, v)?,
            "flip_probability" => a.flip_probability = parse(key, v)?,
            "contrast_pivot" => {
                a.contrast_pivot = match v {
                    "mean" => ContrastPivot::ImageMean,
                    other => ContrastPivot::Fixed(
                        other
                            .parse()
                            .map_err(|_| format!("{key}: expected \"mean\" or a number, got {v:?}"))?,
                    ),
                }
            }
            "nyu_preprocess" => self.nyu_preprocess = parse_bool(key, v)?,
            "aggregation" => self.aggregation = parse(key, v)?,
            "train_dir" => self.paths.train_dir = Some(v.into()),
            "eval_dir" => self.paths.eval_dir = Some(v.into()),
            "checkpoint" => self.paths.checkpoint = Some(v.into()),
            "out_dir" => self.paths.out_dir = Some(v.into()),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        self.train.validate()?;
        self.augment.validate()
    }
}

/// Parses configuration text; `origin` names the source in error messages.
pub fn parse_config_str(text: &str, origin: &str) -> Result<RunConfig> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.to_string(),
            line: i + 1,
            message,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(err(format!("unknown key {k:?}")));
        }
        if entries.iter().any(|(_, key, _)| *key == k) {
            return Err(err(format!("duplicate key {k:?}")));
        }
        entries.push((i + 1, k, v));
    }
    // The preset replaces the whole network config, so it goes first.
    entries.sort_by_key(|(_, k, _)| *k != "preset");
    let mut cfg = RunConfig::default();
    for (line, k, v) in entries {
        cfg.apply(k, v).map_err(|message| Error::Parse {
            path: origin.to_string(),
            line,
            message,
        })?;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn parse_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_config_str(&text, &path.display().to_string())
}
