use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

use super::module::{join, Mode, Module, Param, Slot};
use super::scalar::Scalar;
use super::tensor::Tensor4;

/// Geometry of a square-kernel convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Geometry {
    in_c: usize,
    out_c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    h: usize,
    w: usize,
    oh: usize,
    ow: usize,
}

impl Geometry {
    fn new(x: [usize; 4], w: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if w.len() != 4 || w[2] != w[3] {
            return Err(Error::shape(format!(
                "conv weight dims {w:?} must be [O, C, k, k]"
            )));
        }
        let (out_c, in_c, k) = (w[0], w[1], w[2]);
        if x[1] != in_c {
            return Err(Error::shape(format!(
                "conv expects {in_c} input channels, got {}",
                x[1]
            )));
        }
        if stride == 0 {
            return Err(Error::invalid("conv stride must be positive"));
        }
        let (h, wd) = (x[2], x[3]);
        if h + 2 * pad < k || wd + 2 * pad < k {
            return Err(Error::shape(format!(
                "conv kernel {k} larger than padded input {h}x{wd} (pad {pad})"
            )));
        }
        Ok(Self {
            in_c,
            out_c,
            k,
            stride,
            pad,
            h,
            w: wd,
            oh: (h + 2 * pad - k) / stride + 1,
            ow: (wd + 2 * pad - k) / stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn patch_len(&self) -> usize {
        self.in_c * self.k * self.k
    }

    fn out_pixels(&self) -> usize {
        self.oh * self.ow
    }
}

/// Output columns `ox` whose input column `ox * stride + kx - pad` lies
/// inside `0..w`.
fn valid_cols(g: &Geometry, kx: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kx).div_ceil(g.stride).min(g.ow);
    let hi = if g.w + g.pad > kx {
        ((g.w + g.pad - kx - 1) / g.stride + 1).min(g.ow)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Unrolls one sample into a `(C*k*k) x (OH*OW)` matrix; padding reads as 0.
fn im2col<T: Scalar>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let p = g.out_pixels();
    for c in 0..g.in_c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let (lo, hi) = valid_cols(g, kx);
                let row = &mut cols[((c * g.k + ky) * g.k + kx) * p..][..p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let dst = &mut row[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    let start = lo * g.stride + kx - g.pad;
                    if g.stride == 1 {
                        dst[lo..hi].copy_from_slice(&src[start..start + hi - lo]);
                    } else {
                        for (d, s) in dst[lo..hi]
                            .iter_mut()
                            .zip(src[start..].iter().step_by(g.stride))
                        {
                            *d = *s;
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-adds a column matrix back into a sample gradient.
fn col2im<T: Scalar>(cols: &[T], g: &Geometry, dx: &mut [T]) {
    let p = g.out_pixels();
    for c in 0..g.in_c {
        let plane = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let (lo, hi) = valid_cols(g, kx);
                let row = &cols[((c * g.k + ky) * g.k + kx) * p..][..p];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    let src = &row[oy * g.ow + lo..oy * g.ow + hi];
                    let start = lo * g.stride + kx - g.pad;
                    for (d, &v) in dst[start..].iter_mut().step_by(g.stride).zip(src) {
                        *d = *d + v;
                    }
                }
            }
        }
    }
}

/// Cross-correlation with zero padding. `weights` is `[O, C, k, k]`
/// row-major; `bias` has `O` entries.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor4<T>,
    weights: &[T],
    weight_dims: &[usize],
    bias: Option<&[T]>,
    stride: usize,
    pad: usize,
) -> Result<Tensor4<T>> {
    let g = Geometry::new(x.dims(), weight_dims, stride, pad)?;
    if weights.len() != g.out_c * g.patch_len() {
        return Err(Error::shape("conv weight length does not match its dims"));
    }
    if let Some(b) = bias {
        if b.len() != g.out_c {
            return Err(Error::shape(format!(
                "conv bias has {} entries, need {}",
                b.len(),
                g.out_c
            )));
        }
    }
    let n = x.batch();
    let p = g.out_pixels();
    let mut out = Tensor4::zeros([n, g.out_c, g.oh, g.ow]);
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); g.patch_len() * p]
    };
    for s in 0..n {
        let xs = x.sample(s);
        let b_mat: &[T] = if g.is_pointwise() {
            xs
        } else {
            im2col(xs, &g, &mut cols);
            &cols
        };
        let ys = out.sample_mut(s);
        let beta = match bias {
            Some(b) => {
                for (o, row) in ys.chunks_exact_mut(p).enumerate() {
                    row.iter_mut().for_each(|v| *v = b[o]);
                }
                T::one()
            }
            None => T::zero(),
        };
        T::gemm(
            false,
            false,
            g.out_c,
            p,
            g.patch_len(),
            T::one(),
            weights,
            b_mat,
            beta,
            ys,
        );
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`]: `(grad_x, grad_w, grad_b)`.
pub fn conv2d_backward<T: Scalar>(
    x: &Tensor4<T>,
    weights: &[T],
    weight_dims: &[usize],
    grad_out: &Tensor4<T>,
    stride: usize,
    pad: usize,
) -> Result<(Tensor4<T>, Vec<T>, Vec<T>)> {
    let g = Geometry::new(x.dims(), weight_dims, stride, pad)?;
    let n = x.batch();
    if grad_out.dims() != [n, g.out_c, g.oh, g.ow] {
        return Err(Error::shape(format!(
            "conv grad_out {:?} does not match output [{n}, {}, {}, {}]",
            grad_out.dims(),
            g.out_c,
            g.oh,
            g.ow
        )));
    }
    let p = g.out_pixels();
    let kk = g.patch_len();
    let mut grad_x = Tensor4::zeros(x.dims());
    let mut grad_w = vec![T::zero(); g.out_c * kk];
    let mut grad_b = vec![T::zero(); g.out_c];
    let mut cols = vec![T::zero(); if g.is_pointwise() { 0 } else { kk * p }];
    let mut dcols = vec![T::zero(); if g.is_pointwise() { 0 } else { kk * p }];
    for s in 0..n {
        let gs = grad_out.sample(s);
        for (o, row) in gs.chunks_exact(p).enumerate() {
            grad_b[o] = grad_b[o] + row.iter().copied().sum::<T>();
        }
        if g.is_pointwise() {
            T::gemm(
                false,
                true,
                g.out_c,
                kk,
                p,
                T::one(),
                gs,
                x.sample(s),
                T::one(),
                &mut grad_w,
            );
            T::gemm(
                true,
                false,
                kk,
                p,
                g.out_c,
                T::one(),
                weights,
                gs,
                T::zero(),
                grad_x.sample_mut(s),
            );
        } else {
            im2col(x.sample(s), &g, &mut cols);
            T::gemm(
                false,
                true,
                g.out_c,
                kk,
                p,
                T::one(),
                gs,
                &cols,
                T::one(),
                &mut grad_w,
            );
            T::gemm(
                true,
                false,
                kk,
                p,
                g.out_c,
                T::one(),
                weights,
                gs,
                T::zero(),
                &mut dcols,
            );
            col2im(&dcols, &g, grad_x.sample_mut(s));
        }
    }
    Ok((grad_x, grad_w, grad_b))
}

/// Convolution layer with He-normal initialized weights.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub stride: usize,
    pub pad: usize,
    input: Option<Tensor4<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        in_c: usize,
        out_c: usize,
        k: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let fan_in = (in_c * k * k) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let value = (0..out_c * in_c * k * k)
            .map(|_| T::of(normal.sample(rng)))
            .collect();
        Self {
            weight: Param::new(vec![out_c, in_c, k, k], value),
            bias: bias.then(|| Param::filled(vec![out_c], T::zero())),
            stride,
            pad,
            input: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.dims[1]
    }
}

impl<T: Scalar> Module<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let out = conv2d_forward(
            x,
            &self.weight.value,
            &self.weight.dims,
            self.bias.as_ref().map(|b| b.value.as_slice()),
            self.stride,
            self.pad,
        )?;
        self.input = (mode == Mode::Train).then(|| x.clone());
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::invalid("conv backward without a train-mode forward"))?;
        let (gx, gw, gb) = conv2d_backward(
            x,
            &self.weight.value,
            &self.weight.dims,
            grad_out,
            self.stride,
            self.pad,
        )?;
        for (a, b) in self.weight.grad.iter_mut().zip(gw) {
            *a = *a + b;
        }
        if let Some(bias) = self.bias.as_mut() {
            for (a, b) in bias.grad.iter_mut().zip(gb) {
                *a = *a + b;
            }
        }
        Ok(gx)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, Slot<'_, T>)) {
        f(join(prefix, "weight"), Slot::Param(&mut self.weight));
        if let Some(b) = self.bias.as_mut() {
            f(join(prefix, "bias"), Slot::Param(b));
        }
    }
}
