//! Reference implementations written independently of the library kernels.
#![allow(dead_code)]

use detailnet::Tensor;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn random(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::new(dims.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Small integers: every product and partial sum is exact in f64, so any
/// summation order gives the same bits.
pub fn random_int(dims: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::new(
        dims.to_vec(),
        (0..n).map(|_| rng.random_range(-4i32..=4) as f64).collect(),
    )
    .unwrap()
}

/// Leading pad and output size of a same-padded axis.
pub fn same_axis(len: usize, k: usize, stride: usize, dilation: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let extent = dilation * (k - 1) + 1;
    let needed = ((out - 1) * stride + extent).saturating_sub(len);
    (needed / 2, out)
}

/// Four nested loops straight from the definition
/// `y[o,i,j] = b[o] + Σ_c Σ_ky Σ_kx x[c, i·s + r·ky − pt, j·s + r·kx − pl] · w[o,c,ky,kx]`.
pub fn conv_direct(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    stride: usize,
    dilation: usize,
    same: bool,
) -> Tensor<f64> {
    let [n, c, h, wd] = x.dims().try_into().unwrap();
    let [co, ci, kh, kw] = w.dims().try_into().unwrap();
    assert_eq!(c, ci);
    let ((pt, oh), (pl, ow)) = if same {
        (same_axis(h, kh, stride, dilation), same_axis(wd, kw, stride, dilation))
    } else {
        (
            (0, (h - dilation * (kh - 1) - 1) / stride + 1),
            (0, (wd - dilation * (kw - 1) - 1) / stride + 1),
        )
    };
    let xv = x.data();
    let wv = w.data();
    let mut out = vec![0.0; n * co * oh * ow];
    for b_ in 0..n {
        for o in 0..co {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = b.data()[o];
                    for ch in 0..c {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let yy = (i * stride + dilation * ky) as isize - pt as isize;
                                let xx = (j * stride + dilation * kx) as isize - pl as isize;
                                if yy < 0 || xx < 0 || yy >= h as isize || xx >= wd as isize {
                                    continue;
                                }
                                let xi = ((b_ * c + ch) * h + yy as usize) * wd + xx as usize;
                                acc += xv[xi] * wv[((o * c + ch) * kh + ky) * kw + kx];
                            }
                        }
                    }
                    out[((b_ * co + o) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    Tensor::new([n, co, oh, ow], out).unwrap()
}

/// Ordinary stride-1 convolution on an explicitly zero-padded copy of the input.
pub fn conv_standard(x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let [n, c, h, wd] = x.dims().try_into().unwrap();
    let [co, _, kh, kw] = w.dims().try_into().unwrap();
    let (pt, pl) = ((kh - 1) / 2, (kw - 1) / 2);
    let (ph, pw) = (h + kh - 1, wd + kw - 1);
    let mut padded = vec![0.0; n * c * ph * pw];
    for p in 0..n * c {
        for y in 0..h {
            for x_ in 0..wd {
                padded[(p * ph + y + pt) * pw + x_ + pl] = x.data()[(p * h + y) * wd + x_];
            }
        }
    }
    let mut out = Vec::with_capacity(n * co * h * wd);
    for b_ in 0..n {
        for o in 0..co {
            for y in 0..h {
                for x_ in 0..wd {
                    let mut acc = b.data()[o];
                    for ch in 0..c {
                        let plane = &padded[(b_ * c + ch) * ph * pw..];
                        let kernel = &w.data()[(o * c + ch) * kh * kw..];
                        for ky in 0..kh {
                            for kx in 0..kw {
                                acc += plane[(y + ky) * pw + x_ + kx] * kernel[ky * kw + kx];
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    Tensor::new([n, co, h, wd], out).unwrap()
}

pub fn max_abs_diff(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    assert_eq!(a.dims(), b.dims());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub struct ConvCase {
    pub x: Tensor<f64>,
    pub w: Tensor<f64>,
    pub b: Tensor<f64>,
    pub spec: detailnet::ConvSpec,
}

/// Case `i` cycles the dilation through 1, 2, 4, 8; everything else is random.
pub fn conv_case(i: usize, rng: &mut ChaCha8Rng) -> ConvCase {
    use detailnet::{ConvSpec, Padding};
    let dilation = [1, 2, 4, 8][i % 4];
    let k = [1, 2, 3, 5][rng.random_range(0..4)];
    let stride = if rng.random_bool(0.25) { 2 } else { 1 };
    let extent = dilation * (k - 1) + 1;
    let valid = rng.random_bool(0.3);
    let lo = if valid { extent } else { 1 };
    let (h, w) = (rng.random_range(lo..lo + 14), rng.random_range(lo..lo + 14));
    let (n, cin, cout) = (
        rng.random_range(1..=2),
        rng.random_range(1..=4),
        rng.random_range(1..=4),
    );
    let spec = ConvSpec::new(cout, cin, k)
        .with_stride(stride)
        .with_dilation(dilation)
        .with_padding(if valid { Padding::Valid } else { Padding::Same });
    ConvCase {
        x: random(&[n, cin, h, w], rng),
        w: random(&[cout, cin, k, k], rng),
        b: random(&[cout], rng),
        spec,
    }
}
