//! Dilated 2-D convolution via im2col + GEMM.
//!
//! Output element `(n, o, i, j)` is
//! `b[o] + Σ_c Σ_ky Σ_kx x[n, c, i·s + r·ky − pad_t, j·s + r·kx − pad_l] · w[o, c, ky, kx]`
//! with zeros outside the input. `r = 1` is ordinary convolution.

use ndarray::linalg::general_mat_mul;
use ndarray::{ArrayView2, ArrayViewMut2};

use super::{exec, Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding so that output extent is `ceil(input / stride)`.
    Same,
    /// No padding.
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub out_channels: usize,
    pub in_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub dilation: usize,
    pub padding: Padding,
}

/// Resolved output extent and leading padding for one input size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub out_h: usize,
    pub out_w: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvSpec {
    /// Square kernel, stride 1, dilation 1, same padding.
    pub fn new(out_channels: usize, in_channels: usize, kernel: usize) -> Self {
        Self {
            out_channels,
            in_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride: 1,
            dilation: 1,
            padding: Padding::Same,
        }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride;
        self
    }

    pub fn with_dilation(mut self, dilation: usize) -> Self {
        self.dilation = dilation;
        self
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.dilation == 0 {
            return Err(Error::config(format!(
                "stride and dilation must be positive (stride={}, dilation={})",
                self.stride, self.dilation
            )));
        }
        if self.out_channels == 0 || self.in_channels == 0 || self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::config(format!("degenerate conv spec {self:?}")));
        }
        Ok(())
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }

    pub fn effective_kernel(&self) -> (usize, usize) {
        (
            self.dilation * (self.kernel_h - 1) + 1,
            self.dilation * (self.kernel_w - 1) + 1,
        )
    }

    pub fn geometry(&self, h: usize, w: usize) -> Result<ConvGeometry> {
        self.validate()?;
        let (eh, ew) = self.effective_kernel();
        let s = self.stride;
        match self.padding {
            Padding::Same => {
                let out_h = h.div_ceil(s);
                let out_w = w.div_ceil(s);
                let total_h = ((out_h - 1) * s + eh).saturating_sub(h);
                let total_w = ((out_w - 1) * s + ew).saturating_sub(w);
                Ok(ConvGeometry {
                    out_h,
                    out_w,
                    pad_top: total_h / 2,
                    pad_left: total_w / 2,
                })
            }
            Padding::Valid => {
                if h < eh || w < ew {
                    return Err(Error::shape(format!(
                        "input {h}x{w} smaller than effective kernel {eh}x{ew}"
                    )));
                }
                Ok(ConvGeometry {
                    out_h: (h - eh) / s + 1,
                    out_w: (w - ew) / s + 1,
                    pad_top: 0,
                    pad_left: 0,
                })
            }
        }
    }

    fn is_pointwise(&self, geom: &ConvGeometry) -> bool {
        self.kernel_h == 1 && self.kernel_w == 1 && self.stride == 1 && geom.pad_top == 0 && geom.pad_left == 0
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel_h * self.kernel_w
    }
}

fn check_operands<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<ConvGeometry> {
    spec.validate()?;
    let (_, c, h, w) = input.nchw()?;
    if c != spec.in_channels {
        return Err(Error::shape(format!(
            "conv2d: input has {c} channels, spec expects {}",
            spec.in_channels
        )));
    }
    if weights.dims() != spec.weight_dims() {
        return Err(Error::shape(format!(
            "conv2d: weight dims {:?}, expected {:?}",
            weights.dims(),
            spec.weight_dims()
        )));
    }
    if bias.dims() != [spec.out_channels] {
        return Err(Error::shape(format!(
            "conv2d: bias dims {:?}, expected [{}]",
            bias.dims(),
            spec.out_channels
        )));
    }
    spec.geometry(h, w)
}

/// Unfolds one sample `[C, H, W]` into columns `[C·kh·kw, out_h·out_w]`.
fn im2col<T: Real>(x: &[T], h: usize, w: usize, spec: &ConvSpec, g: &ConvGeometry, cols: &mut [T]) {
    let (oh, ow) = (g.out_h, g.out_w);
    let (s, r) = (spec.stride as isize, spec.dilation as isize);
    let mut row = 0;
    for c in 0..spec.in_channels {
        let plane = &x[c * h * w..(c + 1) * h * w];
        for ky in 0..spec.kernel_h {
            for kx in 0..spec.kernel_w {
                let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = oy as isize * s + ky as isize * r - g.pad_top as isize;
                    let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    for (ox, o) in out_row.iter_mut().enumerate() {
                        let ix = ox as isize * s + kx as isize * r - g.pad_left as isize;
                        *o = if ix < 0 || ix >= w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Folds columns back onto a zeroed sample gradient, summing overlaps.
fn col2im<T: Real>(cols: &[T], h: usize, w: usize, spec: &ConvSpec, g: &ConvGeometry, dx: &mut [T]) {
    let (oh, ow) = (g.out_h, g.out_w);
    let (s, r) = (spec.stride as isize, spec.dilation as isize);
    let mut row = 0;
    for c in 0..spec.in_channels {
        let plane = &mut dx[c * h * w..(c + 1) * h * w];
        for ky in 0..spec.kernel_h {
            for kx in 0..spec.kernel_w {
                let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                for oy in 0..oh {
                    let iy = oy as isize * s + ky as isize * r - g.pad_top as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = ox as isize * s + kx as isize * r - g.pad_left as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + src[oy * ow + ox];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// `c = a·b + beta·c` with `a` optionally read transposed from row-major storage.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Real>(
    a: &[T],
    a_rows: usize,
    a_cols: usize,
    transpose_a: bool,
    b: &[T],
    b_rows: usize,
    b_cols: usize,
    transpose_b: bool,
    beta: T,
    c: &mut [T],
) {
    let a = ArrayView2::from_shape((a_rows, a_cols), a).expect("gemm lhs shape");
    let b = ArrayView2::from_shape((b_rows, b_cols), b).expect("gemm rhs shape");
    let a = if transpose_a { a.reversed_axes() } else { a };
    let b = if transpose_b { b.reversed_axes() } else { b };
    let mut c = ArrayViewMut2::from_shape((a.nrows(), b.ncols()), c).expect("gemm out shape");
    general_mat_mul(T::one(), &a, &b, beta, &mut c);
}

pub fn conv2d<T: Real>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let g = check_operands(input, weights, bias, spec)?;
    let (n, _, h, w) = input.nchw()?;
    let (cout, plane_out, k) = (spec.out_channels, g.out_h * g.out_w, spec.patch_len());
    let in_len = spec.in_channels * h * w;
    let pointwise = spec.is_pointwise(&g);
    let x = input.data();
    let wt = weights.data();
    let b = bias.data();

    let mut out = vec![T::zero(); n * cout * plane_out];
    exec::for_each_chunk(&mut out, cout * plane_out, |i, y| {
        for (o, row) in y.chunks_mut(plane_out).enumerate() {
            row.fill(b[o]);
        }
        let xs = &x[i * in_len..(i + 1) * in_len];
        if pointwise {
            gemm(wt, cout, k, false, xs, k, plane_out, false, T::one(), y);
        } else {
            let mut cols = vec![T::zero(); k * plane_out];
            im2col(xs, h, w, spec, &g, &mut cols);
            gemm(wt, cout, k, false, &cols, k, plane_out, false, T::one(), y);
        }
    });
    Tensor::new([n, cout, g.out_h, g.out_w], out)
}

/// Gradients of a convolution, each computed only when requested.
pub struct ConvGrads<T> {
    pub input: Option<Tensor<T>>,
    pub weights: Option<Tensor<T>>,
    pub bias: Option<Tensor<T>>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
    want: [bool; 3],
) -> Result<ConvGrads<T>> {
    let (n, _, h, w) = input.nchw()?;
    let g = spec.geometry(h, w)?;
    let (cout, plane_out, k) = (spec.out_channels, g.out_h * g.out_w, spec.patch_len());
    if grad_out.dims() != [n, cout, g.out_h, g.out_w] {
        return Err(Error::shape(format!(
            "conv2d backward: gradient dims {:?} do not match output",
            grad_out.dims()
        )));
    }
    let in_len = spec.in_channels * h * w;
    let pointwise = spec.is_pointwise(&g);
    let x = input.data();
    let wt = weights.data();
    let dy = grad_out.data();

    let grad_input = if want[0] {
        let mut dx = vec![T::zero(); n * in_len];
        exec::for_each_chunk(&mut dx, in_len, |i, dxs| {
            let dys = &dy[i * cout * plane_out..(i + 1) * cout * plane_out];
            if pointwise {
                gemm(wt, cout, k, true, dys, cout, plane_out, false, T::zero(), dxs);
            } else {
                let mut dcols = vec![T::zero(); k * plane_out];
                gemm(wt, cout, k, true, dys, cout, plane_out, false, T::zero(), &mut dcols);
                col2im(&dcols, h, w, spec, &g, dxs);
            }
        });
        Some(Tensor::new(input.dims().to_vec(), dx)?)
    } else {
        None
    };

    let grad_weights = if want[1] {
        let partials = exec::map_indexed(n, |i| {
            let xs = &x[i * in_len..(i + 1) * in_len];
            let dys = &dy[i * cout * plane_out..(i + 1) * cout * plane_out];
            let mut dw = vec![T::zero(); cout * k];
            if pointwise {
                gemm(dys, cout, plane_out, false, xs, k, plane_out, true, T::zero(), &mut dw);
            } else {
                let mut cols = vec![T::zero(); k * plane_out];
                im2col(xs, h, w, spec, &g, &mut cols);
                gemm(
                    dys,
                    cout,
                    plane_out,
                    false,
                    &cols,
                    k,
                    plane_out,
                    true,
                    T::zero(),
                    &mut dw,
                );
            }
            dw
        });
        let mut total = vec![T::zero(); cout * k];
        for p in &partials {
            for (t, &v) in total.iter_mut().zip(p) {
                *t = *t + v;
            }
        }
        Some(Tensor::new(spec.weight_dims().to_vec(), total)?)
    } else {
        None
    };

    let grad_bias = if want[2] {
        let mut db = vec![T::zero(); cout];
        for i in 0..n {
            for (o, d) in db.iter_mut().enumerate() {
                let start = (i * cout + o) * plane_out;
                *d = *d + dy[start..start + plane_out].iter().copied().sum::<T>();
            }
        }
        Some(Tensor::new([cout], db)?)
    } else {
        None
    };

    Ok(ConvGrads {
        input: grad_input,
        weights: grad_weights,
        bias: grad_bias,
    })
}
