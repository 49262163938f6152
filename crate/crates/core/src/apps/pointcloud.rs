use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{CameraIntrinsics, RgbImage};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    /// Camera coordinates in metres; `z` points along the optical axis.
    pub xyz: [f64; 3],
    pub rgb: [u8; 3],
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Point>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Lifts every valid pixel `(u, v)` with depth `z` to
/// `((u − cx)·z/fx, (v − cy)·z/fy, z)`, in row-major pixel order.
pub fn backproject(depth: &Tensor<f32>, rgb: &RgbImage, mask: &[bool], k: &CameraIntrinsics) -> Result<PointCloud> {
    let [h, w] = *depth.dims() else {
        return Err(Error::shape(format!("depth must be [H, W], got {:?}", depth.dims())));
    };
    if (rgb.height, rgb.width) != (h, w) || mask.len() != h * w {
        return Err(Error::shape(format!(
            "depth is {w}x{h}, rgb is {}x{}, mask has {} entries",
            rgb.width,
            rgb.height,
            mask.len()
        )));
    }
    if !(k.fx > 0.0 && k.fy > 0.0) {
        return Err(Error::config(format!(
            "focal lengths must be positive, got {} {}",
            k.fx, k.fy
        )));
    }
    let mut points = Vec::new();
    for v in 0..h {
        for u in 0..w {
            let i = v * w + u;
            if !mask[i] {
                continue;
            }
            let z = depth.data()[i] as f64;
            if !(z > 0.0 && z.is_finite()) {
                return Err(Error::data(format!("pixel ({u}, {v}) has depth {z}")));
            }
            let x = (u as f64 - k.cx) * z / k.fx;
            let y = (v as f64 - k.cy) * z / k.fy;
            points.push(Point {
                xyz: [x, y, z],
                rgb: rgb.pixel(u, v).map(to_u8),
            });
        }
    }
    Ok(PointCloud { points })
}

/// ASCII PLY with float `x y z` and uchar `red green blue` per vertex.
pub fn export_ply(cloud: &PointCloud) -> Result<String> {
    if cloud.is_empty() {
        return Err(Error::data("point cloud is empty"));
    }
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\nend_header\n",
        cloud.len()
    );
    for p in &cloud.points {
        let [x, y, z] = p.xyz.map(|c| c as f32);
        let [r, g, b] = p.rgb;
        writeln!(out, "{x} {y} {z} {r} {g} {b}").expect("writing to a String");
    }
    Ok(out)
}

/// Writes `cloud` to `path`; an empty cloud is rejected before the file is created.
pub fn write_ply(cloud: &PointCloud, path: &Path) -> Result<()> {
    let text = export_ply(cloud)?;
    fs::write(path, text).map_err(|e| Error::file(path, e))
}

/// Reads the ASCII layout produced by [`export_ply`].
pub fn parse_ply(text: &str) -> Result<PointCloud> {
    let bad = |m: String| Error::Format(format!("ply: {m}"));
    let mut lines = text.lines();
    if lines.next() != Some("ply") {
        return Err(bad("missing ply magic".into()));
    }
    let mut count = None;
    let mut props = Vec::new();
    for line in lines.by_ref() {
        let parts: Vec<&str> = line.split_whitespace().collect();
        match parts.as_slice() {
            ["format", "ascii", "1.0"] | ["comment", ..] => {}
            ["format", ..] => return Err(bad(format!("unsupported {line:?}"))),
            ["element", "vertex", n] => count = Some(n.parse::<usize>().map_err(|_| bad(format!("bad count {n:?}")))?),
            ["property", ty, name] => props.push((ty.to_string(), name.to_string())),
            ["end_header"] => break,
            _ => return Err(bad(format!("unexpected header line {line:?}"))),
        }
    }
    let expected = ["x", "y", "z", "red", "green", "blue"];
    if props.iter().map(|(_, n)| n.as_str()).ne(expected) {
        return Err(bad(format!("expected properties {expected:?}")));
    }
    let count = count.ok_or_else(|| bad("no vertex element".into()))?;
    let mut points = Vec::with_capacity(count);
    for (i, line) in lines.take(count).enumerate() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(bad(format!("vertex {i}: expected 6 fields")));
        }
        let c = |j: usize| {
            f[j].parse::<f32>()
                .map(f64::from)
                .map_err(|_| bad(format!("vertex {i}: bad {:?}", f[j])))
        };
        let b = |j: usize| {
            f[j].parse::<u8>()
                .map_err(|_| bad(format!("vertex {i}: bad {:?}", f[j])))
        };
        points.push(Point {
            xyz: [c(0)?, c(1)?, c(2)?],
            rgb: [b(3)?, b(4)?, b(5)?],
        });
    }
    if points.len() != count {
        return Err(bad(format!("header declares {count} vertices, found {}", points.len())));
    }
    Ok(PointCloud { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_white_point() {
        let cloud = PointCloud {
            points: vec![Point {
                xyz: [0.0, 0.0, 1.0],
                rgb: [255; 3],
            }],
        };
        let text = export_ply(&cloud).unwrap();
        assert!(text.contains("element vertex 1\n"));
        assert!(text.ends_with("end_header\n0 0 1 255 255 255\n"));
        assert_eq!(parse_ply(&text).unwrap(), cloud);
    }

    #[test]
    fn principal_and_unit_tangent_rays() {
        let k = CameraIntrinsics {
            fx: 2.0,
            fy: 2.0,
            cx: 1.0,
            cy: 1.0,
        };
        let depth = Tensor::full([3, 4], 2.5f32);
        let rgb = RgbImage::filled(4, 3, [1.0, 0.0, 0.0]);
        let cloud = backproject(&depth, &rgb, &[true; 12], &k).unwrap();
        assert_eq!(cloud.points[4 + 1].xyz, [0.0, 0.0, 2.5]);
        assert_eq!(cloud.points[4 + 3].xyz, [2.5, 0.0, 2.5]);
        assert_eq!(cloud.points[0].rgb, [255, 0, 0]);
    }
}
