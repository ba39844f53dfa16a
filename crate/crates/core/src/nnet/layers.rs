use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

use super::module::{join, Mode, Module, Param, Slot};
use super::scalar::Scalar;
use super::tensor::Tensor4;

fn no_cache(layer: &str) -> Error {
    Error::invalid(format!("{layer} backward without a train-mode forward"))
}

#[derive(Debug, Clone, Default)]
pub struct Relu {
    active: Option<(Vec<bool>, [usize; 4])>,
}

impl Relu {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Module<T> for Relu {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let mut out = x.clone();
        out.data_mut().iter_mut().for_each(|v| {
            if *v <= T::zero() {
                *v = T::zero();
            }
        });
        self.active = (mode == Mode::Train)
            .then(|| (x.data().iter().map(|v| *v > T::zero()).collect(), x.dims()));
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (mask, dims) = self.active.as_ref().ok_or_else(|| no_cache("relu"))?;
        if *dims != grad_out.dims() {
            return Err(Error::shape("relu grad_out dims differ from input"));
        }
        let mut g = grad_out.clone();
        for (v, &on) in g.data_mut().iter_mut().zip(mask) {
            if !on {
                *v = T::zero();
            }
        }
        Ok(g)
    }
}

/// 2x2 max pooling with stride 2 (odd trailing rows/columns are dropped).
#[derive(Debug, Clone, Default)]
pub struct MaxPool2x2 {
    argmax: Option<(Vec<usize>, [usize; 4])>,
}

impl MaxPool2x2 {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Module<T> for MaxPool2x2 {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let [n, c, h, w] = x.dims();
        if h < 2 || w < 2 {
            return Err(Error::shape(format!(
                "maxpool needs at least 2x2 input, got {h}x{w}"
            )));
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor4::zeros([n, c, oh, ow]);
        let mut arg = Vec::with_capacity(n * c * oh * ow);
        for s in 0..n {
            for ch in 0..c {
                let base = (s * c + ch) * h * w;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut best = base + 2 * oy * w + 2 * ox;
                        for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                            let i = base + (2 * oy + dy) * w + 2 * ox + dx;
                            if x.data()[i] > x.data()[best] {
                                best = i;
                            }
                        }
                        out.data_mut()[((s * c + ch) * oh + oy) * ow + ox] = x.data()[best];
                        arg.push(best);
                    }
                }
            }
        }
        self.argmax = (mode == Mode::Train).then_some((arg, x.dims()));
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let (arg, dims) = self.argmax.as_ref().ok_or_else(|| no_cache("maxpool"))?;
        if arg.len() != grad_out.len() {
            return Err(Error::shape("maxpool grad_out dims differ from output"));
        }
        let mut g = Tensor4::zeros(*dims);
        for (&i, &v) in arg.iter().zip(grad_out.data()) {
            g.data_mut()[i] = g.data_mut()[i] + v;
        }
        Ok(g)
    }
}

/// Averages each channel plane down to `1 x 1`.
#[derive(Debug, Clone, Default)]
pub struct GlobalAvgPool {
    input_dims: Option<[usize; 4]>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Module<T> for GlobalAvgPool {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let [n, c, h, w] = x.dims();
        let hw = h * w;
        let inv = T::of(1.0 / hw as f64);
        let data = x
            .data()
            .chunks_exact(hw)
            .map(|plane| plane.iter().copied().sum::<T>() * inv)
            .collect();
        self.input_dims = (mode == Mode::Train).then_some(x.dims());
        Tensor4::from_vec([n, c, 1, 1], data)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let dims = self
            .input_dims
            .ok_or_else(|| no_cache("global average pool"))?;
        let [n, c, h, w] = dims;
        if grad_out.dims() != [n, c, 1, 1] {
            return Err(Error::shape(
                "global average pool grad_out dims differ from output",
            ));
        }
        let hw = h * w;
        let inv = T::of(1.0 / hw as f64);
        let mut g = Tensor4::zeros(dims);
        for (plane, &v) in g.data_mut().chunks_exact_mut(hw).zip(grad_out.data()) {
            plane.iter_mut().for_each(|p| *p = v * inv);
        }
        Ok(g)
    }
}

/// Fully connected layer on flattened samples; output is `[N, out, 1, 1]`.
#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor4<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, (2.0 / in_features as f64).sqrt()).expect("positive std");
        let value = (0..in_features * out_features)
            .map(|_| T::of(normal.sample(rng)))
            .collect();
        Self {
            weight: Param::new(vec![out_features, in_features], value),
            bias: Param::filled(vec![out_features], T::zero()),
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.dims[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.dims[0]
    }
}

impl<T: Scalar> Module<T> for Linear<T> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>> {
        let (fi, fo) = (self.in_features(), self.out_features());
        if x.sample_len() != fi {
            return Err(Error::shape(format!(
                "linear expects {fi} features, got {}",
                x.sample_len()
            )));
        }
        let n = x.batch();
        let mut out = vec![T::zero(); n * fo];
        for row in out.chunks_exact_mut(fo) {
            row.copy_from_slice(&self.bias.value);
        }
        T::gemm(
            false,
            true,
            n,
            fo,
            fi,
            T::one(),
            x.data(),
            &self.weight.value,
            T::one(),
            &mut out,
        );
        self.input = (mode == Mode::Train).then(|| x.clone());
        Tensor4::from_vec([n, fo, 1, 1], out)
    }

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>> {
        let x = self.input.as_ref().ok_or_else(|| no_cache("linear"))?;
        let (fi, fo) = (self.in_features(), self.out_features());
        let n = x.batch();
        if grad_out.dims() != [n, fo, 1, 1] {
            return Err(Error::shape("linear grad_out dims differ from output"));
        }
        let g = grad_out.data();
        T::gemm(
            true,
            false,
            fo,
            fi,
            n,
            T::one(),
            g,
            x.data(),
            T::one(),
            &mut self.weight.grad,
        );
        for row in g.chunks_exact(fo) {
            for (b, &v) in self.bias.grad.iter_mut().zip(row) {
                *b = *b + v;
            }
        }
        let mut gx = Tensor4::zeros(x.dims());
        T::gemm(
            false,
            false,
            n,
            fi,
            fo,
            T::one(),
            g,
            &self.weight.value,
            T::zero(),
            gx.data_mut(),
        );
        Ok(gx)
    }

    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(String, Slot<'_, T>)) {
        f(join(prefix, "weight"), Slot::Param(&mut self.weight));
        f(join(prefix, "bias"), Slot::Param(&mut self.bias));
    }
}
