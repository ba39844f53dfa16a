use crate::error::Result;

use super::scalar::Scalar;
use super::tensor::Tensor4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics, caches kept for backward.
    Train,
    /// Running statistics, nothing cached.
    Eval,
}

/// A learnable tensor with its gradient and SGD momentum buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub dims: Vec<usize>,
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub velocity: Vec<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(dims: Vec<usize>, value: Vec<T>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), value.len());
        let n = value.len();
        Self {
            dims,
            value,
            grad: vec![T::zero(); n],
            velocity: vec![T::zero(); n],
        }
    }

    pub fn filled(dims: Vec<usize>, v: T) -> Self {
        let n = dims.iter().product();
        Self::new(dims, vec![v; n])
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// A named piece of model state handed to visitors.
pub enum Slot<'a, T> {
    Param(&'a mut Param<T>),
    /// Non-learnable state such as batch-norm running statistics.
    Buffer {
        dims: Vec<usize>,
        value: &'a mut Vec<T>,
    },
}

/// A differentiable layer with manual backward.
///
/// `backward` must follow a `forward` in [`Mode::Train`]; it accumulates
/// parameter gradients and returns the gradient with respect to the input.
pub trait Module<T: Scalar> {
    fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> Result<Tensor4<T>>;

    fn backward(&mut self, grad_out: &Tensor4<T>) -> Result<Tensor4<T>>;

    /// Visits parameters and buffers in a stable order under `prefix`.
    fn visit(&mut self, _prefix: &str, _f: &mut dyn FnMut(String, Slot<'_, T>)) {}

    fn zero_grad(&mut self) {
        self.visit("", &mut |_, slot| {
            if let Slot::Param(p) = slot {
                p.zero_grad();
            }
        });
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
