//! RGB-D samples and their on-disk form: `<id>.rgb.ppm` (8-bit P6),
//! `<id>.depth.pgm` (16-bit P5, millimetres, 0 = invalid) and `<id>.meta`
//! (`key=value` intrinsics).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::netpbm::{self, Pnm, PnmKind};
use crate::error::{Error, Result};
use crate::tensor::{ops, Real, Tensor};

/// Pinhole intrinsics in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err(Error::data(format!(
                "focal lengths must be positive (fx={}, fy={})",
                self.fx, self.fy
            )));
        }
        let inside = |c: f64, n: usize| c >= 0.0 && c <= n as f64;
        if !inside(self.cx, width) || !inside(self.cy, height) {
            return Err(Error::data(format!(
                "principal point ({}, {}) outside {width}x{height} image",
                self.cx, self.cy
            )));
        }
        Ok(())
    }

    /// Intrinsics after resampling the image by `(sx, sy)` with half-pixel
    /// centres and cropping `(left, top)` pixels.
    pub fn resized_and_cropped(&self, sx: f64, sy: f64, left: f64, top: f64) -> Self {
        Self {
            fx: self.fx * sx,
            fy: self.fy * sy,
            cx: (self.cx + 0.5) * sx - 0.5 - left,
            cy: (self.cy + 0.5) * sy - 0.5 - top,
        }
    }
}

/// Interleaved RGB image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height * 3 {
            return Err(Error::shape(format!(
                "rgb image {width}x{height} needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, color: [f32; 3]) -> Self {
        let data = std::iter::repeat_n(color, width * height).flatten().collect();
        Self { width, height, data }
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    /// Planar `[1, 3, H, W]` tensor.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        let plane = self.width * self.height;
        Tensor::from_fn([1, 3, self.height, self.width], |i| {
            let (c, p) = (i / plane, i % plane);
            T::lit(self.data[p * 3 + c] as f64)
        })
    }

    /// Inverse of [`to_tensor`](Self::to_tensor) for a `[1, 3, H, W]` or `[3, H, W]` tensor.
    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Result<Self> {
        let d = t.dims();
        let (h, w) = match d {
            [1, 3, h, w] | [3, h, w] => (*h, *w),
            _ => return Err(Error::shape(format!("expected a 3-channel image tensor, got {d:?}"))),
        };
        let plane = h * w;
        let mut data = vec![0.0; plane * 3];
        for (i, v) in t.data().iter().enumerate() {
            data[(i % plane) * 3 + i / plane] = v.to_f64_lossless() as f32;
        }
        Self::new(w, h, data)
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width * 3) {
            for px in row.chunks(3).rev() {
                data.extend_from_slice(px);
            }
        }
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn to_pnm(&self) -> Pnm {
        Pnm {
            kind: PnmKind::Rgb,
            width: self.width,
            height: self.height,
            maxval: 255,
            samples: self
                .data
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u16)
                .collect(),
        }
    }

    pub fn from_pnm(img: &Pnm) -> Result<Self> {
        let scale = img.maxval as f32;
        Self::new(
            img.width,
            img.height,
            img.samples.iter().map(|&s| s as f32 / scale).collect(),
        )
    }

    pub fn read_ppm(path: &Path) -> Result<Self> {
        Self::from_pnm(&netpbm::read(path, PnmKind::Rgb)?)
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        netpbm::write(path, &self.to_pnm())
    }

    /// Bilinear resize (align-corners = false).
    pub fn resized(&self, width: usize, height: usize) -> Result<Self> {
        Self::from_tensor(&ops::resize_bilinear(&self.to_tensor::<f32>(), height, width)?)
    }

    pub fn cropped(&self, left: usize, top: usize, width: usize, height: usize) -> Result<Self> {
        if left + width > self.width || top + height > self.height {
            return Err(Error::shape(format!(
                "crop {width}x{height}+{left}+{top} exceeds {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(width * height * 3);
        for y in top..top + height {
            let start = (y * self.width + left) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Self::new(width, height, data)
    }
}

/// Aligned colour image, metric depth, validity mask and intrinsics.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbdSample {
    pub id: String,
    pub rgb: RgbImage,
    /// `[H, W]` depth in metres.
    pub depth: Tensor<f32>,
    /// `true` where `depth` is a valid measurement.
    pub mask: Vec<bool>,
    pub intrinsics: CameraIntrinsics,
}

impl RgbdSample {
    pub fn width(&self) -> usize {
        self.rgb.width
    }

    pub fn height(&self) -> usize {
        self.rgb.height
    }

    pub fn validate(&self) -> Result<()> {
        let (w, h) = (self.width(), self.height());
        if self.depth.dims() != [h, w] || self.mask.len() != w * h {
            return Err(Error::shape(format!(
                "sample {}: rgb is {w}x{h} but depth is {:?} with {} mask entries",
                self.id,
                self.depth.dims(),
                self.mask.len()
            )));
        }
        if let Some((d, _)) = self
            .depth
            .data()
            .iter()
            .zip(&self.mask)
            .find(|(d, m)| **m && !(**d > 0.0 && d.is_finite()))
        {
            return Err(Error::data(format!("sample {}: valid pixel has depth {d}", self.id)));
        }
        Ok(())
    }

    pub fn flip_horizontal(&self) -> Self {
        let w = self.width();
        let mut mask = self.mask.clone();
        mask.chunks_mut(w).for_each(|row| row.reverse());
        let mut intrinsics = self.intrinsics;
        intrinsics.cx = (w - 1) as f64 - intrinsics.cx;
        Self {
            id: self.id.clone(),
            rgb: self.rgb.flip_horizontal(),
            depth: self.depth.flip_horizontal(),
            mask,
            intrinsics,
        }
    }

    /// Resize to 312×416 (bilinear colour, nearest depth) then centre-crop to 240×320.
    pub fn nyu_preprocess(&self) -> Result<Self> {
        const RESIZED: (usize, usize) = (312, 416);
        const CROP: (usize, usize) = (240, 320);
        let (rh, rw) = RESIZED;
        let (ch, cw) = CROP;
        let (top, left) = ((rh - ch) / 2, (rw - cw) / 2);
        let rgb = self.rgb.resized(rw, rh)?.cropped(left, top, cw, ch)?;

        let (w, h) = (self.width(), self.height());
        let mut depth = Vec::with_capacity(cw * ch);
        let mut mask = Vec::with_capacity(cw * ch);
        for y in top..top + ch {
            let sy = nearest(y, rh, h);
            for x in left..left + cw {
                let i = sy * w + nearest(x, rw, w);
                depth.push(self.depth.data()[i]);
                mask.push(self.mask[i]);
            }
        }
        let sx = rw as f64 / w as f64;
        let sy = rh as f64 / h as f64;
        Ok(Self {
            id: self.id.clone(),
            rgb,
            depth: Tensor::new([ch, cw], depth)?,
            mask,
            intrinsics: self.intrinsics.resized_and_cropped(sx, sy, left as f64, top as f64),
        })
    }
}

/// Source index of output pixel `o` when resampling `input` pixels to `output`.
fn nearest(o: usize, output: usize, input: usize) -> usize {
    (((o as f64 + 0.5) * input as f64 / output as f64) as usize).min(input - 1)
}

/// Sample metadata file contents.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SampleMeta {
    pub intrinsics: CameraIntrinsics,
    /// Metres per depth-image unit.
    pub depth_unit: f64,
}

pub const DEFAULT_DEPTH_UNIT: f64 = 0.001;

pub fn parse_meta(text: &str, path: &str) -> Result<SampleMeta> {
    let mut values = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_string(),
            line: i + 1,
            message,
        };
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key=value, got {line:?}")))?;
        let (k, v) = (k.trim(), v.trim());
        if !["fx", "fy", "cx", "cy", "depth_unit"].contains(&k) {
            return Err(err(format!("unknown key {k:?}")));
        }
        let v: f64 = v.parse().map_err(|_| err(format!("{k}: not a number: {v:?}")))?;
        values.insert(k.to_string(), v);
    }
    let get = |k: &str| {
        values.get(k).copied().ok_or_else(|| Error::Parse {
            path: path.to_string(),
            line: 0,
            message: format!("missing intrinsic {k}"),
        })
    };
    let depth_unit = values.get("depth_unit").copied().unwrap_or(DEFAULT_DEPTH_UNIT);
    if !(depth_unit > 0.0) {
        return Err(Error::Parse {
            path: path.to_string(),
            line: 0,
            message: format!("depth_unit must be positive, got {depth_unit}"),
        });
    }
    Ok(SampleMeta {
        intrinsics: CameraIntrinsics {
            fx: get("fx")?,
            fy: get("fy")?,
            cx: get("cx")?,
            cy: get("cy")?,
        },
        depth_unit,
    })
}

pub fn format_meta(meta: &SampleMeta) -> String {
    let k = &meta.intrinsics;
    format!(
        "fx={}\nfy={}\ncx={}\ncy={}\ndepth_unit={}\n",
        k.fx, k.fy, k.cx, k.cy, meta.depth_unit
    )
}

/// Decodes a 16-bit depth image; zero samples become invalid pixels.
pub fn depth_from_pnm(img: &Pnm, depth_unit: f64) -> Result<(Tensor<f32>, Vec<bool>)> {
    let mask: Vec<bool> = img.samples.iter().map(|&s| s > 0).collect();
    let depth = img.samples.iter().map(|&s| (s as f64 * depth_unit) as f32).collect();
    Ok((Tensor::new([img.height, img.width], depth)?, mask))
}

/// Encodes metric depth in `depth_unit` steps. Invalid pixels become 0; valid
/// ones are clamped to `1..=65535` so validity survives the round trip.
pub fn depth_to_pnm(depth: &Tensor<f32>, mask: Option<&[bool]>, depth_unit: f64) -> Result<Pnm> {
    let [h, w] = depth.dims() else {
        return Err(Error::shape(format!("depth must be [H, W], got {:?}", depth.dims())));
    };
    let samples = depth
        .data()
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            if mask.is_some_and(|m| !m[i]) {
                0
            } else {
                (d as f64 / depth_unit).round().clamp(1.0, 65535.0) as u16
            }
        })
        .collect();
    Ok(Pnm {
        kind: PnmKind::Gray,
        width: *w,
        height: *h,
        maxval: 65535,
        samples,
    })
}

pub fn read_depth_pgm(path: &Path, depth_unit: f64) -> Result<(Tensor<f32>, Vec<bool>)> {
    depth_from_pnm(&netpbm::read(path, PnmKind::Gray)?, depth_unit)
}

pub fn write_depth_pgm(path: &Path, depth: &Tensor<f32>, mask: Option<&[bool]>) -> Result<()> {
    netpbm::write(path, &depth_to_pnm(depth, mask, DEFAULT_DEPTH_UNIT)?)
}

pub fn read_meta(path: &Path) -> Result<SampleMeta> {
    let text = fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    parse_meta(&text, &path.display().to_string())
}

/// Loads one sample; `nyu_preprocess` applies the 312×416 resize and 240×320 centre crop.
pub fn load_sample(rgb_path: &Path, depth_path: &Path, meta_path: &Path, nyu_preprocess: bool) -> Result<RgbdSample> {
    let meta = read_meta(meta_path)?;
    let rgb = RgbImage::read_ppm(rgb_path)?;
    let (depth, mask) = read_depth_pgm(depth_path, meta.depth_unit)?;
    if depth.dims() != [rgb.height, rgb.width] {
        return Err(Error::Format(format!(
            "{} is {}x{} but {} is {}x{}",
            rgb_path.display(),
            rgb.width,
            rgb.height,
            depth_path.display(),
            depth.dims()[1],
            depth.dims()[0]
        )));
    }
    let id = rgb_path
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(|n| n.strip_suffix(".rgb.ppm").or_else(|| n.strip_suffix(".ppm")))
        .unwrap_or("sample")
        .to_string();
    let sample = RgbdSample {
        id,
        rgb,
        depth,
        mask,
        intrinsics: meta.intrinsics,
    };
    let sample = if nyu_preprocess {
        sample.nyu_preprocess()?
    } else {
        sample
    };
    sample.intrinsics.validate(sample.width(), sample.height())?;
    Ok(sample)
}

/// Paths of a sample's three files inside `dir`.
pub fn sample_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("{id}.rgb.ppm")),
        dir.join(format!("{id}.depth.pgm")),
        dir.join(format!("{id}.meta")),
    )
}

pub fn save_sample(sample: &RgbdSample, dir: &Path) -> Result<()> {
    sample.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::file(dir, e))?;
    let (rgb, depth, meta) = sample_paths(dir, &sample.id);
    sample.rgb.write_ppm(&rgb)?;
    netpbm::write(
        &depth,
        &depth_to_pnm(&sample.depth, Some(&sample.mask), DEFAULT_DEPTH_UNIT)?,
    )?;
    let text = format_meta(&SampleMeta {
        intrinsics: sample.intrinsics,
        depth_unit: DEFAULT_DEPTH_UNIT,
    });
    fs::write(&meta, text).map_err(|e| Error::file(&meta, e))
}

/// Loads every `<id>.rgb.ppm` in `dir` (with its depth and meta files), sorted by id.
pub fn load_dataset(dir: &Path, nyu_preprocess: bool) -> Result<Vec<RgbdSample>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::file(dir, e))?;
    let mut ids = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::file(dir, e))?;
        if let Some(id) = entry.file_name().to_str().and_then(|n| n.strip_suffix(".rgb.ppm")) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    if ids.is_empty() {
        return Err(Error::data(format!("no *.rgb.ppm samples in {}", dir.display())));
    }
    ids.iter()
        .map(|id| {
            let (r, d, m) = sample_paths(dir, id);
            load_sample(&r, &d, &m, nyu_preprocess)
        })
        .collect()
}
