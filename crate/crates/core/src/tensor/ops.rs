//! Forward and backward kernels for every non-convolution primitive.

use super::{same_dims, Real, Tensor};
use crate::error::{Error, Result};

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

pub fn relu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    zip_map(x, dy, |x, g| if x > T::zero() { g } else { T::zero() })
}

pub fn sigmoid_scalar<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Takes the forward output `y`, since `σ' = y(1 − y)`.
pub fn sigmoid_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    zip_map(y, dy, |y, g| g * y * (T::one() - y))
}

/// `ln(1 + e^x)`, evaluated without overflow.
pub fn softplus<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()) + (-v.abs()).exp().ln_1p())
}

pub fn softplus_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    zip_map(x, dy, |x, g| g * sigmoid_scalar(x))
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_dims("add", a, b)?;
    Ok(zip_map(a, b, |a, b| a + b))
}

/// Elementwise product.
pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_dims("mul", a, b)?;
    Ok(zip_map(a, b, |a, b| a * b))
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::new(a.dims().to_vec(), data).expect("matching dims")
}

pub fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, ca, h, w) = a.nchw()?;
    let (nb, cb, hb, wb) = b.nchw()?;
    if (n, h, w) != (nb, hb, wb) {
        return Err(Error::shape(format!(
            "concat_channels: dims {:?} and {:?} disagree outside the channel axis",
            a.dims(),
            b.dims()
        )));
    }
    let (la, lb) = (ca * h * w, cb * h * w);
    let mut out = Vec::with_capacity(n * (la + lb));
    for i in 0..n {
        out.extend_from_slice(&a.data()[i * la..(i + 1) * la]);
        out.extend_from_slice(&b.data()[i * lb..(i + 1) * lb]);
    }
    Tensor::new([n, ca + cb, h, w], out)
}

/// Splits a concatenated gradient back into the two operands' shares.
pub fn concat_channels_backward<T: Real>(a_channels: usize, dy: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = dy.nchw()?;
    let cb = c - a_channels;
    let (la, lb) = (a_channels * h * w, cb * h * w);
    let mut da = Vec::with_capacity(n * la);
    let mut db = Vec::with_capacity(n * lb);
    for chunk in dy.data().chunks(la + lb) {
        da.extend_from_slice(&chunk[..la]);
        db.extend_from_slice(&chunk[la..]);
    }
    Ok((Tensor::new([n, a_channels, h, w], da)?, Tensor::new([n, cb, h, w], db)?))
}

/// Multiplies each `[H, W]` plane of `x` by the matching entry of `weights: [N, C, 1, 1]`.
pub fn channel_scale<T: Real>(x: &Tensor<T>, weights: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.nchw()?;
    if weights.dims() != [n, c, 1, 1] {
        return Err(Error::shape(format!(
            "channel_scale: weight dims {:?}, expected [{n}, {c}, 1, 1]",
            weights.dims()
        )));
    }
    let mut out = x.clone();
    for (plane, &s) in out.data_mut().chunks_mut(h * w).zip(weights.data()) {
        plane.iter_mut().for_each(|v| *v = *v * s);
    }
    Ok(out)
}

pub fn channel_scale_backward<T: Real>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let dx = channel_scale(dy, weights)?;
    let (_, _, h, w) = x.nchw()?;
    let dw = x
        .data()
        .chunks(h * w)
        .zip(dy.data().chunks(h * w))
        .map(|(xp, gp)| xp.iter().zip(gp).map(|(&a, &b)| a * b).sum())
        .collect();
    Ok((dx, Tensor::new(weights.dims().to_vec(), dw)?))
}

pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.nchw()?;
    let inv = T::one() / T::lit((h * w) as f64);
    let data = x
        .data()
        .chunks(h * w)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::new([n, c, 1, 1], data)
}

pub fn global_avg_pool_backward<T: Real>(input_dims: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let plane = input_dims[2] * input_dims[3];
    let inv = T::one() / T::lit(plane as f64);
    let mut data = Vec::with_capacity(dy.len() * plane);
    for &g in dy.data() {
        data.extend(std::iter::repeat_n(g * inv, plane));
    }
    Tensor::new(input_dims.to_vec(), data)
}

/// Source taps of one output coordinate along one axis.
#[derive(Clone, Copy, Debug)]
struct Tap<T> {
    lo: usize,
    hi: usize,
    w_lo: T,
    w_hi: T,
}

/// Half-pixel-centre (align-corners = false) sampling positions.
fn taps<T: Real>(input: usize, output: usize) -> Vec<Tap<T>> {
    let scale = T::lit(input as f64) / T::lit(output as f64);
    let half = T::lit(0.5);
    (0..output)
        .map(|o| {
            let src = ((T::lit(o as f64) + half) * scale - half).max(T::zero());
            let lo = src.floor().to_usize().unwrap_or(0).min(input - 1);
            let hi = (lo + 1).min(input - 1);
            let frac = src - T::lit(lo as f64);
            Tap {
                lo,
                hi,
                w_lo: T::one() - frac,
                w_hi: frac,
            }
        })
        .collect()
}

pub fn resize_bilinear<T: Real>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.nchw()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::config(format!("resize target {out_h}x{out_w} must be positive")));
    }
    let ty = taps::<T>(h, out_h);
    let tx = taps::<T>(w, out_w);
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    for plane in x.data().chunks(h * w) {
        for a in &ty {
            let (r0, r1) = (&plane[a.lo * w..(a.lo + 1) * w], &plane[a.hi * w..(a.hi + 1) * w]);
            for b in &tx {
                let top = b.w_lo * r0[b.lo] + b.w_hi * r0[b.hi];
                let bottom = b.w_lo * r1[b.lo] + b.w_hi * r1[b.hi];
                out.push(a.w_lo * top + a.w_hi * bottom);
            }
        }
    }
    Tensor::new([n, c, out_h, out_w], out)
}

pub fn resize_bilinear_backward<T: Real>(input_dims: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let (h, w) = (input_dims[2], input_dims[3]);
    let (_, _, out_h, out_w) = dy.nchw()?;
    let ty = taps::<T>(h, out_h);
    let tx = taps::<T>(w, out_w);
    let mut dx = Tensor::zeros(input_dims.to_vec());
    for (plane, gp) in dx.data_mut().chunks_mut(h * w).zip(dy.data().chunks(out_h * out_w)) {
        for (oy, a) in ty.iter().enumerate() {
            for (ox, b) in tx.iter().enumerate() {
                let g = gp[oy * out_w + ox];
                let top = a.w_lo * g;
                let bottom = a.w_hi * g;
                plane[a.lo * w + b.lo] = plane[a.lo * w + b.lo] + b.w_lo * top;
                plane[a.lo * w + b.hi] = plane[a.lo * w + b.hi] + b.w_hi * top;
                plane[a.hi * w + b.lo] = plane[a.hi * w + b.lo] + b.w_lo * bottom;
                plane[a.hi * w + b.hi] = plane[a.hi * w + b.hi] + b.w_hi * bottom;
            }
        }
    }
    Ok(dx)
}

/// Geometry of a same-padded max pool: `ceil(H / stride)` outputs per axis.
fn pool_geometry(h: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = h.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(h);
    (out, total / 2)
}

/// Flat input index of the first maximum in each pooling window.
fn pool_argmax<T: Real>(x: &Tensor<T>, kernel: usize, stride: usize) -> Result<(Vec<usize>, [usize; 4])> {
    let (n, c, h, w) = x.nchw()?;
    if kernel == 0 || stride == 0 {
        return Err(Error::config("max pool kernel and stride must be positive"));
    }
    let (oh, pt) = pool_geometry(h, kernel, stride);
    let (ow, pl) = pool_geometry(w, kernel, stride);
    let data = x.data();
    let mut idx = Vec::with_capacity(n * c * oh * ow);
    for p in 0..n * c {
        let base = p * h * w;
        for oy in 0..oh {
            let y0 = (oy * stride) as isize - pt as isize;
            for ox in 0..ow {
                let x0 = (ox * stride) as isize - pl as isize;
                let mut best: Option<(usize, T)> = None;
                for ky in 0..kernel as isize {
                    let iy = y0 + ky;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kernel as isize {
                        let ix = x0 + kx;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        let at = base + iy as usize * w + ix as usize;
                        if best.is_none_or(|(_, v)| data[at] > v) {
                            best = Some((at, data[at]));
                        }
                    }
                }
                idx.push(best.expect("window overlaps input").0);
            }
        }
    }
    Ok((idx, [n, c, oh, ow]))
}

pub fn max_pool2d<T: Real>(x: &Tensor<T>, kernel: usize, stride: usize) -> Result<Tensor<T>> {
    let (idx, dims) = pool_argmax(x, kernel, stride)?;
    Tensor::new(dims, idx.iter().map(|&i| x.data()[i]).collect())
}

pub fn max_pool2d_backward<T: Real>(x: &Tensor<T>, kernel: usize, stride: usize, dy: &Tensor<T>) -> Result<Tensor<T>> {
    let (idx, _) = pool_argmax(x, kernel, stride)?;
    let mut dx = Tensor::zeros(x.dims().to_vec());
    let d = dx.data_mut();
    for (&i, &g) in idx.iter().zip(dy.data()) {
        d[i] = d[i] + g;
    }
    Ok(dx)
}

/// Per-channel affine form `y = x·scale + shift` of a frozen batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BnAffine<T> {
    pub scale: Vec<T>,
    pub shift: Vec<T>,
}

impl<T: Real> BnAffine<T> {
    pub fn from_stats(gamma: &Tensor<T>, beta: &Tensor<T>, mean: &Tensor<T>, var: &Tensor<T>, eps: T) -> Result<Self> {
        if !(eps > T::zero()) {
            return Err(Error::config(format!("batch norm eps must be positive, got {eps}")));
        }
        let c = gamma.len();
        for (name, t) in [("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)] {
            if t.dims() != [c] {
                return Err(Error::shape(format!(
                    "batch norm {name} dims {:?}, expected [{c}]",
                    t.dims()
                )));
            }
        }
        if let Some(v) = var.data().iter().find(|v| !(**v >= T::zero())) {
            return Err(Error::data(format!("batch norm variance {v} is negative")));
        }
        let scale: Vec<T> = gamma
            .data()
            .iter()
            .zip(var.data())
            .map(|(&g, &v)| g / (v + eps).sqrt())
            .collect();
        let shift = beta
            .data()
            .iter()
            .zip(mean.data())
            .zip(&scale)
            .map(|((&b, &m), &s)| b - m * s)
            .collect();
        Ok(Self { scale, shift })
    }

    pub fn apply(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, c, h, w) = x.nchw()?;
        if c != self.scale.len() {
            return Err(Error::shape(format!(
                "batch norm over {} channels applied to {c}",
                self.scale.len()
            )));
        }
        let mut out = x.clone();
        for (i, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
            let (s, b) = (self.scale[i % c], self.shift[i % c]);
            plane.iter_mut().for_each(|v| *v = *v * s + b);
        }
        Ok(out)
    }

    pub fn backward(&self, dy: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, c, h, w) = dy.nchw()?;
        let mut dx = dy.clone();
        for (i, plane) in dx.data_mut().chunks_mut(h * w).enumerate() {
            let s = self.scale[i % c];
            plane.iter_mut().for_each(|v| *v = *v * s);
        }
        Ok(dx)
    }
}

/// Mean absolute difference of `ln(1 + d)` over valid pixels, plus what the
/// backward pass needs.
#[derive(Clone, Debug)]
pub struct LogL1<T> {
    pub loss: T,
    /// `∂loss/∂pred` for every element (zero on masked pixels).
    pub grad: Tensor<T>,
}

pub fn log_l1_loss<T: Real>(pred: &Tensor<T>, truth: &Tensor<T>, mask: &[bool]) -> Result<LogL1<T>> {
    same_dims("log_l1_loss", pred, truth)?;
    if mask.len() != pred.len() {
        return Err(Error::shape(format!(
            "log_l1_loss: mask has {} entries for {} pixels",
            mask.len(),
            pred.len()
        )));
    }
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(Error::data("log_l1_loss: no valid pixels"));
    }
    let inv_n = T::one() / T::lit(n as f64);
    let mut total = T::zero();
    let mut grad = Tensor::zeros(pred.dims().to_vec());
    for (((&p, &t), &m), g) in pred.data().iter().zip(truth.data()).zip(mask).zip(grad.data_mut()) {
        if !m {
            continue;
        }
        if !(t >= T::zero()) {
            return Err(Error::data(format!(
                "log_l1_loss: ground truth {t} < 0 on a valid pixel"
            )));
        }
        if !(p > -T::one()) {
            return Err(Error::data(format!("log_l1_loss: prediction {p} <= -1")));
        }
        let diff = t.ln_1p() - p.ln_1p();
        total = total + diff.abs();
        let sign = if diff > T::zero() {
            -T::one()
        } else if diff < T::zero() {
            T::one()
        } else {
            T::zero()
        };
        *g = sign * inv_n / (T::one() + p);
    }
    Ok(LogL1 {
        loss: total * inv_n,
        grad,
    })
}
