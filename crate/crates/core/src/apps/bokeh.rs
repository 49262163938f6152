use crate::error::{Error, Result};
use crate::io::RgbImage;
use crate::tensor::exec;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BokehParams {
    /// Depth of the in-focus plane, metres.
    pub focus_depth: f64,
    /// Blur gain applied to the inverse-depth offset.
    pub aperture: f64,
    /// Largest circle of confusion, pixels.
    pub max_radius: f64,
}

impl BokehParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.focus_depth > 0.0 && self.focus_depth.is_finite()) {
            return Err(Error::config(format!(
                "focus depth must be positive, got {}",
                self.focus_depth
            )));
        }
        if !(self.aperture >= 0.0 && self.aperture.is_finite()) {
            return Err(Error::config(format!(
                "aperture must be non-negative, got {}",
                self.aperture
            )));
        }
        if !(self.max_radius >= 0.0 && self.max_radius.is_finite()) {
            return Err(Error::config(format!(
                "max radius must be non-negative, got {}",
                self.max_radius
            )));
        }
        Ok(())
    }
}

/// Circle-of-confusion radius in pixels for a point at `depth`.
pub fn coc_radius(depth: f64, p: &BokehParams) -> f64 {
    let r = p.aperture * (1.0 / depth - 1.0 / p.focus_depth).abs() * p.focus_depth;
    r.min(p.max_radius)
}

/// Gather blur: each pixel averages the in-image pixels of a disc whose
/// radius is its own circle of confusion. Radius-zero pixels are copied.
pub fn render_bokeh(rgb: &RgbImage, depth: &Tensor<f32>, params: &BokehParams) -> Result<RgbImage> {
    params.validate()?;
    let (w, h) = (rgb.width, rgb.height);
    if depth.dims() != [h, w] {
        return Err(Error::shape(format!("rgb is {w}x{h}, depth is {:?}", depth.dims())));
    }
    if let Some(d) = depth.data().iter().find(|d| !(**d > 0.0 && d.is_finite())) {
        return Err(Error::data(format!("depth must be positive, found {d}")));
    }
    let mut out = rgb.data.clone();
    exec::for_each_chunk(&mut out, w * 3, |y, row| {
        for x in 0..w {
            let r = coc_radius(depth.data()[y * w + x] as f64, params);
            if r == 0.0 {
                continue;
            }
            let reach = r.floor() as isize;
            let mut acc = [0.0f64; 3];
            let mut n = 0usize;
            for dy in -reach..=reach {
                let yy = y as isize + dy;
                if yy < 0 || yy >= h as isize {
                    continue;
                }
                for dx in -reach..=reach {
                    let xx = x as isize + dx;
                    if xx < 0 || xx >= w as isize || ((dx * dx + dy * dy) as f64) > r * r {
                        continue;
                    }
                    let px = rgb.pixel(xx as usize, yy as usize);
                    for c in 0..3 {
                        acc[c] += px[c] as f64;
                    }
                    n += 1;
                }
            }
            for c in 0..3 {
                row[x * 3 + c] = (acc[c] / n as f64) as f32;
            }
        }
    });
    RgbImage::new(w, h, out)
}
