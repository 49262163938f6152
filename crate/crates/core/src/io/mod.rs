//! Sample files, synthetic scenes, and run configuration.

mod config;
pub mod netpbm;
mod sample;
mod synth;

pub use config::{parse_config, parse_config_str, Paths, RunConfig, KEYS as CONFIG_KEYS};
pub use sample::{
    depth_from_pnm, depth_to_pnm, format_meta, load_dataset, load_sample, parse_meta, read_depth_pgm, read_meta,
    sample_paths, save_sample, write_depth_pgm, CameraIntrinsics, RgbImage, RgbdSample, SampleMeta, DEFAULT_DEPTH_UNIT,
};
pub use synth::{generate_scenes, generate_synthetic, ShapeKind, SynthScene, SynthSceneConfig, Texture};
