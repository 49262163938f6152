use crate::io::RgbImage;
use crate::tensor::Tensor;

/// Palette stops from near to far: dark blue, blue, cyan-green, yellow, red.
pub const PALETTE: [[f32; 3]; 5] = [
    [0.0, 0.0, 0.5],
    [0.0, 0.4, 1.0],
    [0.0, 0.9, 0.6],
    [1.0, 0.9, 0.0],
    [0.8, 0.0, 0.0],
];

/// Maps depth linearly from its min to its max onto [`PALETTE`].
/// A constant map uses the first stop.
pub fn colorize_depth(depth: &Tensor<f32>, width: usize, height: usize) -> RgbImage {
    let (lo, hi) = depth
        .data()
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(a, b), &d| (a.min(d), b.max(d)));
    let span = hi - lo;
    let mut img = RgbImage::filled(width, height, PALETTE[0]);
    for (i, &d) in depth.data().iter().enumerate().take(width * height) {
        let t = if span > 0.0 { (d - lo) / span } else { 0.0 };
        let pos = t * (PALETTE.len() - 1) as f32;
        let k = (pos.floor() as usize).min(PALETTE.len() - 2);
        let f = pos - k as f32;
        let (a, b) = (PALETTE[k], PALETTE[k + 1]);
        img.set_pixel(i % width, i / width, [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * f));
    }
    img
}
